// SPDX-License-Identifier: Apache-2.0
#include "glformer/encoder.hpp"

#include <cmath>

#include "glformer/errors.hpp"

namespace glformer {

using ag::VarPtr;

GlobalBranch::GlobalBranch(nn::Registry& reg, const std::string& name, int channels, int heads,
                           int sr_ratio)
    : q(reg, name + ".q", channels, channels),
      k(reg, name + ".k", channels, channels),
      v(reg, name + ".v", channels, channels),
      sr(reg, name + ".sr", channels, channels, sr_ratio, sr_ratio, 0),
      sr_norm(reg, name + ".sr_norm", channels),
      heads_(heads),
      sr_ratio_(sr_ratio) {}

VarPtr GlobalBranch::operator()(const VarPtr& x, VarPtr* attn_out) const {
    const int h = x->value.dim(2), w = x->value.dim(3);
    const int channels = x->value.dim(1);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(channels) / heads_);

    const VarPtr qs = ag::split_heads(q(ag::to_tokens(x)), heads_);
    const VarPtr reduced = sr_norm(sr(x));
    const VarPtr kv_tokens = ag::to_tokens(reduced);
    const VarPtr ks = ag::split_heads(k(kv_tokens), heads_);
    const VarPtr vs = ag::split_heads(v(kv_tokens), heads_);

    const VarPtr attn = ag::softmax_last(ag::scale(ag::matmul_nt(qs, ks), inv_sqrt_d));
    if (attn_out) *attn_out = attn;
    return ag::from_tokens(ag::merge_heads(ag::matmul_nn(attn, vs)), h, w);
}

LocalBranch::LocalBranch(nn::Registry& reg, const std::string& name, int channels,
                         const std::array<int, 3>& kernels) {
    for (int i = 0; i < 3; ++i) {
        const int kk = kernels[static_cast<size_t>(i)];
        pw[static_cast<size_t>(i)] = nn::Conv2d(reg, name + ".pw" + std::to_string(i), channels,
                                                channels, 1, 1, 0);
        dw[static_cast<size_t>(i)] = nn::Conv2d(reg, name + ".dw" + std::to_string(i), channels,
                                                channels, kk, 1, kk / 2, 1, channels);
    }
    aggregate = nn::Conv2d(reg, name + ".aggregate", channels, channels, 1, 1, 0);
}

VarPtr LocalBranch::operator()(const VarPtr& x) const {
    VarPtr prev;
    VarPtr sum;
    for (size_t i = 0; i < 3; ++i) {
        const VarPtr in = prev ? ag::add(x, prev) : x;
        const VarPtr out = dw[i](pw[i](in));
        sum = sum ? ag::add(sum, out) : out;
        prev = out;
    }
    return aggregate(sum);
}

AttentionMixer::AttentionMixer(nn::Registry& reg, const std::string& name, int channels, int heads,
                               int sr_ratio)
    : norm(reg, name + ".norm", channels),
      global(reg, name + ".global", channels, heads, sr_ratio),
      local(reg, name + ".local", channels),
      merge(reg, name + ".merge", channels) {}

VarPtr AttentionMixer::operator()(const VarPtr& x) const {
    const VarPtr n = norm(x);
    return merge(local(n), global(n), x);
}

GatedFfn::GatedFfn(nn::Registry& reg, const std::string& name, int channels, int expansion)
    : norm(reg, name + ".norm", channels),
      proj_in(reg, name + ".proj_in", channels, channels * expansion, 1, 1, 0, 1, 1, true,
              nn::Init::kTruncNormal),
      gate_dw(reg, name + ".gate_dw", channels * expansion, channels * expansion, 3, 1, 1, 1,
              channels * expansion),
      proj_out(reg, name + ".proj_out", channels * expansion, channels, 1, 1, 0, 1, 1, true,
               nn::Init::kZero),
      hidden_(channels * expansion) {
    const int part = hidden_ / 4;
    for (int z = 0; z < 4; ++z) {
        split_dw[static_cast<size_t>(z)] =
            nn::Conv2d(reg, name + ".split_dw" + std::to_string(z), part, part, 3, 1, 1, 1, part);
    }
}

VarPtr GatedFfn::operator()(const VarPtr& x) const {
    const VarPtr y = proj_in(norm(x));
    const VarPtr gate = gate_dw(y);

    const int part = hidden_ / 4;
    std::vector<VarPtr> refined;
    VarPtr prev_split;
    for (int z = 0; z < 4; ++z) {
        const VarPtr sp = ag::slice_c(y, z * part, (z + 1) * part);
        const VarPtr in = prev_split ? ag::add(sp, prev_split) : sp;
        refined.push_back(split_dw[static_cast<size_t>(z)](in));
        prev_split = sp;
    }
    const VarPtr stacked = ag::add(ag::concat_c(refined), gate);
    return ag::add(proj_out(ag::mul(ag::gelu(stacked), gate)), x);
}

PyramidEncoder::PyramidEncoder(nn::Registry& reg, const std::string& name, const ModelConfig& cfg)
    : cfg_(cfg) {
    for (int i = 0; i < 4; ++i) {
        EncoderStage& st = stages[static_cast<size_t>(i)];
        const std::string sname = name + ".stage" + std::to_string(i + 1);
        const int cin = i == 0 ? 3 : cfg.stage_channels[static_cast<size_t>(i - 1)];
        const int cout = cfg.stage_channels[static_cast<size_t>(i)];
        const int kk = i == 0 ? 7 : 3;
        const int stride = i == 0 ? 4 : 2;
        st.embed = nn::Conv2d(reg, sname + ".embed", cin, cout, kk, stride, kk / 2);
        st.embed_norm = nn::LayerNormChw(reg, sname + ".embed_norm", cout);
        for (int d = 0; d < cfg.stage_depths[static_cast<size_t>(i)]; ++d) {
            const std::string bname = sname + ".block" + std::to_string(d);
            st.mixers.emplace_back(reg, bname + ".mixer", cout,
                                   cfg.stage_heads[static_cast<size_t>(i)],
                                   cfg.sr_ratios[static_cast<size_t>(i)]);
            st.ffns.emplace_back(reg, bname + ".ffn", cout, cfg.ffn_expansion);
        }
    }
}

std::array<VarPtr, 4> PyramidEncoder::operator()(const VarPtr& image) const {
    const Tensor& iv = image->value;
    if (iv.ndim() != 4 || iv.dim(1) != 3)
        throw ValidationError("encoder expects a (B,3,H,W) image tensor, got " + iv.shape_str());
    if (iv.dim(2) % 32 != 0 || iv.dim(3) % 32 != 0)
        throw ValidationError("input spatial size must be divisible by 32, got " +
                              std::to_string(iv.dim(2)) + "x" + std::to_string(iv.dim(3)));

    std::array<VarPtr, 4> out;
    VarPtr x = image;
    for (size_t i = 0; i < 4; ++i) {
        const EncoderStage& st = stages[i];
        x = st.embed_norm(st.embed(x));
        for (size_t d = 0; d < st.mixers.size(); ++d) x = st.ffns[d](st.mixers[d](x));
        out[i] = x;
    }
    return out;
}

}  // namespace glformer
