// SPDX-License-Identifier: Apache-2.0
#include "glformer/decoder.hpp"

#include <cmath>

#include "glformer/errors.hpp"

namespace glformer {

using ag::VarPtr;

ConvSandwich::ConvSandwich(nn::Registry& reg, const std::string& name, int cin, int cout,
                           bool zero_init_out)
    : c_in(reg, name + ".c_in", cin, cout, 1, 1, 0),
      c_mid(reg, name + ".c_mid", cout, cout, 3, 1, 1),
      c_out(reg, name + ".c_out", cout, cout, 1, 1, 0, 1, 1, true,
            zero_init_out ? nn::Init::kZero : nn::Init::kFanIn),
      bn_in(reg, name + ".bn_in", cout),
      bn_mid(reg, name + ".bn_mid", cout),
      bn_out(reg, name + ".bn_out", cout) {}

VarPtr ConvSandwich::operator()(const VarPtr& x) const {
    VarPtr y = ag::relu(bn_in(c_in(x)));
    y = ag::relu(bn_mid(c_mid(y)));
    return bn_out(c_out(y));
}

JointAttention::JointAttention(nn::Registry& reg, const std::string& name, int channels)
    : mlp_in(reg, name + ".mlp_in", channels, std::max(1, channels / 8)),
      mlp_out(reg, name + ".mlp_out", std::max(1, channels / 8), channels),
      spatial(reg, name + ".spatial", 2, 1, 7, 1, 3) {}

VarPtr JointAttention::operator()(const VarPtr& x) const {
    const VarPtr avg_gate = mlp_out(ag::relu(mlp_in(ag::global_avgpool(x))));
    const VarPtr max_gate = mlp_out(ag::relu(mlp_in(ag::global_maxpool(x))));
    const VarPtr channel_gate = ag::sigmoid(ag::add(avg_gate, max_gate));
    const VarPtr xc = ag::mul_bcast_hw(x, channel_gate);
    const VarPtr planes = ag::concat_c({ag::mean_c(xc), ag::max_c(xc)});
    const VarPtr spatial_gate = ag::sigmoid(spatial(planes));
    return ag::mul_bcast_c(xc, spatial_gate);
}

LevelProjection::LevelProjection(nn::Registry& reg, const std::string& name, int cin, int cout)
    : project(reg, name + ".project", cin, cout),
      attend(reg, name + ".attend", cout),
      norm(reg, name + ".norm", cout) {}

VarPtr LevelProjection::operator()(const VarPtr& x) const { return norm(attend(project(x))); }

DilatedPyramid::DilatedPyramid(nn::Registry& reg, const std::string& name, int cin, int cout)
    : entry(reg, name + ".entry", cin, cout, 1, 1, 0),
      entry_bn(reg, name + ".entry_bn", cout) {
    const int growth = cout / 2;
    int acc = cout;
    for (size_t i = 0; i < 4; ++i) {
        const int d = kDilations[i];
        compress[i] = nn::Conv2d(reg, name + ".compress" + std::to_string(i), acc, cout, 1, 1, 0);
        compress_bn[i] = nn::BatchNorm2d(reg, name + ".compress_bn" + std::to_string(i), cout);
        dilated[i] = nn::Conv2d(reg, name + ".dilated" + std::to_string(i), cout, growth, 3, 1, d, d);
        dilated_bn[i] = nn::BatchNorm2d(reg, name + ".dilated_bn" + std::to_string(i), growth);
        acc += growth;
    }
    exit = nn::Conv2d(reg, name + ".exit", acc, cout, 1, 1, 0);
    exit_bn = nn::BatchNorm2d(reg, name + ".exit_bn", cout);
}

VarPtr DilatedPyramid::operator()(const VarPtr& x) const {
    std::vector<VarPtr> feats{ag::relu(entry_bn(entry(x)))};
    for (size_t i = 0; i < 4; ++i) {
        const VarPtr in = feats.size() == 1 ? feats[0] : ag::concat_c(feats);
        VarPtr y = ag::relu(compress_bn[i](compress[i](in)));
        y = ag::relu(dilated_bn[i](dilated[i](y)));
        feats.push_back(y);
    }
    return ag::relu(exit_bn(exit(ag::concat_c(feats))));
}

CrossLevelFusion::CrossLevelFusion(nn::Registry& reg, const std::string& name, int channels,
                                   int sr_ratio)
    : q_fine(reg, name + ".q_fine", channels, channels),
      k_fine(reg, name + ".k_fine", channels, channels),
      v_fine(reg, name + ".v_fine", channels, channels),
      q_coarse(reg, name + ".q_coarse", channels, channels),
      k_coarse(reg, name + ".k_coarse", channels, channels),
      v_coarse(reg, name + ".v_coarse", channels, channels),
      kv_norm_fine(reg, name + ".kv_norm_fine", channels),
      kv_norm_coarse(reg, name + ".kv_norm_coarse", channels),
      local_fine(reg, name + ".local_fine", channels),
      local_coarse(reg, name + ".local_coarse", channels),
      merge(reg, name + ".merge", channels),
      sr_ratio_(sr_ratio) {}

VarPtr CrossLevelFusion::operator()(const VarPtr& coarse, const VarPtr& fine, Probes* probes) const {
    if (coarse->value.dim(1) != fine->value.dim(1))
        throw ValidationError("cross-level fusion expects equal channel widths, got " +
                              coarse->value.shape_str() + " vs " + fine->value.shape_str());
    const int h = fine->value.dim(2), w = fine->value.dim(3);
    const int channels = fine->value.dim(1);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(channels));

    const VarPtr up = (coarse->value.dim(2) == h && coarse->value.dim(3) == w)
                          ? coarse
                          : ag::upsample_bilinear(coarse, h, w);

    const VarPtr kv_fine = ag::to_tokens(kv_norm_fine(ag::avgpool2d(fine, sr_ratio_)));
    const VarPtr kv_coarse = ag::to_tokens(kv_norm_coarse(ag::avgpool2d(up, sr_ratio_)));

    const VarPtr qf = ag::split_heads(q_fine(ag::to_tokens(fine)), 1);
    const VarPtr kf = ag::split_heads(k_fine(kv_fine), 1);
    const VarPtr vf = ag::split_heads(v_fine(kv_fine), 1);
    const VarPtr qc = ag::split_heads(q_coarse(ag::to_tokens(up)), 1);
    const VarPtr kc = ag::split_heads(k_coarse(kv_coarse), 1);
    const VarPtr vc = ag::split_heads(v_coarse(kv_coarse), 1);

    // Each level scores itself but reads the other level's values.
    const VarPtr attn_f = ag::softmax_last(ag::scale(ag::matmul_nt(qf, kf), inv_sqrt_d));
    const VarPtr attn_c = ag::softmax_last(ag::scale(ag::matmul_nt(qc, kc), inv_sqrt_d));
    const VarPtr stream_f = ag::matmul_nn(attn_f, vc);
    const VarPtr stream_c = ag::matmul_nn(attn_c, vf);
    const VarPtr exchanged =
        ag::from_tokens(ag::merge_heads(ag::add(stream_f, stream_c)), h, w);

    const VarPtr local_sum = ag::add(local_coarse(up), local_fine(fine));

    if (probes) {
        probes->attn_fine = attn_f;
        probes->attn_coarse = attn_c;
        probes->exchanged = exchanged;
        probes->local = local_sum;
    }
    return merge(local_sum, exchanged, fine);
}

StructureGate::StructureGate(nn::Registry& reg, const std::string& name, int channels,
                             const std::array<int, 4>& dilations)
    : pre(reg, name + ".pre", channels, channels, 1, 1, 0),
      proj(reg, name + ".proj", channels, channels, 1, 1, 0),
      fuse(reg, name + ".fuse", 2 * channels, channels, 1, 1, 0) {
    for (size_t i = 0; i < 4; ++i) {
        const int d = dilations[i];
        atrous[i] = nn::Conv2d(reg, name + ".atrous" + std::to_string(i), channels, 1, 3, 1, d, d);
    }
}

VarPtr StructureGate::operator()(const VarPtr& x, VarPtr* gate_out) const {
    const VarPtr p = pre(x);
    VarPtr att;
    for (size_t i = 0; i < 4; ++i) {
        // 1 - sigmoid: emphasis on what the branch currently suppresses.
        const VarPtr ra = ag::add_const(ag::scale(ag::sigmoid(atrous[i](p)), -1.0), 1.0);
        att = att ? ag::add(att, ra) : ra;
    }
    if (gate_out) *gate_out = att;
    const VarPtr m = proj(x);
    const VarPtr modulated = ag::mul_bcast_c(m, att);
    return ag::add(fuse(ag::concat_c({modulated, m})), x);
}

LevelFusion::LevelFusion(nn::Registry& reg, const std::string& name, int channels)
    : reduce(reg, name + ".reduce", channels, channels, 1, 1, 0),
      fuse(reg, name + ".fuse", 3 * channels, channels, /*zero_init_out=*/true) {}

VarPtr LevelFusion::operator()(const VarPtr& cross, const VarPtr& gated, const VarPtr& entry) const {
    const VarPtr cat = ag::concat_c({cross, gated, reduce(entry)});
    return ag::add(fuse(cat), entry);
}

PyramidDecoder::PyramidDecoder(nn::Registry& reg, const std::string& name,
                               const std::string& head_name, const ModelConfig& cfg)
    : semantic_top(reg, name + ".semantic_top", cfg.stage_channels[3], cfg.decoder_channels) {
    const int dc = cfg.decoder_channels;
    for (size_t i = 0; i < 4; ++i) {
        const std::string lname = name + ".level" + std::to_string(i + 1);
        project[i] = LevelProjection(reg, lname + ".project", cfg.stage_channels[i], dc);
        cross[i] = CrossLevelFusion(reg, lname + ".cross", dc, cfg.sr_ratios[i]);
        gate[i] = StructureGate(reg, lname + ".gate", dc, cfg.gate_dilations);
        fuse[i] = LevelFusion(reg, lname + ".fuse", dc);
    }
    for (size_t i = 0; i < 5; ++i) {
        heads[i] = nn::Conv2d(reg, head_name + ".p" + std::to_string(i + 1), dc, 1, 1, 1, 0);
    }
}

std::array<VarPtr, 5> PyramidDecoder::operator()(const std::array<VarPtr, 4>& pyramid, int out_h,
                                                 int out_w) const {
    const VarPtr top = semantic_top(pyramid[3]);

    std::array<VarPtr, 5> logits;
    VarPtr running = top;
    for (int i = 3; i >= 0; --i) {
        const VarPtr entry = project[static_cast<size_t>(i)](pyramid[static_cast<size_t>(i)]);
        const VarPtr crossed = cross[static_cast<size_t>(i)](running, entry);
        const VarPtr gated = gate[static_cast<size_t>(i)](crossed);
        running = fuse[static_cast<size_t>(i)](crossed, gated, entry);
        logits[static_cast<size_t>(i)] = heads[static_cast<size_t>(i)](running);
    }
    logits[4] = heads[4](top);

    for (auto& l : logits) l = ag::upsample_bilinear(l, out_h, out_w);
    return logits;
}

}  // namespace glformer
