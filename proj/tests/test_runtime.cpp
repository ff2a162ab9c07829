// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "doctest.h"
#include "fd_check.hpp"
#include "glformer/errors.hpp"
#include "glformer/loss.hpp"
#include "glformer/model.hpp"
#include "glformer/runtime.hpp"

using namespace glformer;
namespace fs = std::filesystem;

namespace {

// ---- analytic parameter counts -------------------------------------------
// Written straight from the architecture recipe (layer kinds and sizes),
// independent of the registry, so a drifting layer definition cannot hide.

std::int64_t conv_p(std::int64_t cin, std::int64_t cout, std::int64_t k, std::int64_t groups = 1) {
    return k * k * (cin / groups) * cout + cout;
}
std::int64_t linear_p(std::int64_t cin, std::int64_t cout) { return cin * cout + cout; }
std::int64_t norm_p(std::int64_t c) { return 2 * c; }  // layer norm and batch norm alike

std::int64_t local_branch_p(std::int64_t c) {
    std::int64_t n = 3 * conv_p(c, c, 1);                                 // pointwise
    for (int k : {3, 5, 7}) n += conv_p(c, c, k, c);                      // depthwise
    return n + conv_p(c, c, 1);                                           // aggregate
}

std::int64_t merge_p(std::int64_t c) {
    return 2 * (conv_p(2 * c, c, 1) + conv_p(c, c, 1) + norm_p(c))        // two gain mixers + bn
           + conv_p(c, c, 1);                                             // output projection
}

std::int64_t mixer_p(std::int64_t c, std::int64_t sr) {
    const std::int64_t global = 3 * linear_p(c, c) + conv_p(c, c, sr) + norm_p(c);
    return norm_p(c) + global + local_branch_p(c) + merge_p(c);
}

std::int64_t ffn_p(std::int64_t c, std::int64_t expansion) {
    const std::int64_t h = c * expansion;
    return norm_p(c) + conv_p(c, h, 1) + conv_p(h, h, 3, h)               // widen + gate
           + 4 * conv_p(h / 4, h / 4, 3, h / 4)                           // split refiners
           + conv_p(h, c, 1);
}

std::int64_t encoder_p(const ModelConfig& m) {
    std::int64_t n = 0;
    for (int i = 0; i < 4; ++i) {
        const std::int64_t cin = (i == 0) ? 3 : m.stage_channels[i - 1];
        const std::int64_t c = m.stage_channels[i];
        n += conv_p(cin, c, i == 0 ? 7 : 3) + norm_p(c);
        n += m.stage_depths[i] * (mixer_p(c, m.sr_ratios[i]) + ffn_p(c, m.ffn_expansion));
    }
    return n;
}

std::int64_t sandwich_p(std::int64_t cin, std::int64_t cout) {
    return conv_p(cin, cout, 1) + conv_p(cout, cout, 3) + conv_p(cout, cout, 1) + 3 * norm_p(cout);
}

std::int64_t joint_attention_p(std::int64_t c) {
    const std::int64_t r = std::max<std::int64_t>(1, c / 8);
    return linear_p(c, r) + linear_p(r, c) + conv_p(2, 1, 7);
}

std::int64_t dilated_pyramid_p(std::int64_t cin, std::int64_t cout) {
    const std::int64_t g = cout / 2;
    std::int64_t n = conv_p(cin, cout, 1) + norm_p(cout);
    std::int64_t acc = cout;
    for (int i = 0; i < 4; ++i) {
        n += conv_p(acc, cout, 1) + norm_p(cout);    // dense compress
        n += conv_p(cout, g, 3) + norm_p(g);         // dilated branch
        acc += g;
    }
    return n + conv_p(acc, cout, 1) + norm_p(cout);  // exit at 3x width
}

std::int64_t cross_fusion_p(std::int64_t c) {
    return 6 * linear_p(c, c) + 2 * norm_p(c) + 2 * local_branch_p(c) + merge_p(c);
}

std::int64_t structure_gate_p(std::int64_t c) {
    return conv_p(c, c, 1) + 4 * conv_p(c, 1, 3) + conv_p(c, c, 1) + conv_p(2 * c, c, 1);
}

std::int64_t decoder_p(const ModelConfig& m) {
    const std::int64_t dc = m.decoder_channels;
    std::int64_t n = dilated_pyramid_p(m.stage_channels[3], dc);
    for (int i = 0; i < 4; ++i) {
        n += sandwich_p(m.stage_channels[i], dc) + joint_attention_p(dc) + norm_p(dc);
        n += cross_fusion_p(dc) + structure_gate_p(dc);
        n += conv_p(dc, dc, 1) + sandwich_p(3 * dc, dc);  // level fusion
    }
    return n;
}

// ---------------------------------------------------------------------------

Tensor tensor_of(const std::vector<std::pair<std::string, Tensor>>& kv, const std::string& name) {
    for (const auto& [k, t] : kv)
        if (k == name) return t;
    FAIL("missing section entry ", name);
    return Tensor();
}

bool same_bits(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("glf_runtime_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("initialization depends on names and seed, not registration order") {
    nn::Registry a, b;
    a.add("one.weight", {4, 4}, nn::Init::kTruncNormal, 4);
    a.add("two.weight", {3, 1, 3, 3}, nn::Init::kFanIn, 9);
    b.add("two.weight", {3, 1, 3, 3}, nn::Init::kFanIn, 9);
    b.add("one.weight", {4, 4}, nn::Init::kTruncNormal, 4);

    nn::initialize(a, 5);
    nn::initialize(b, 5);
    CHECK(same_bits(a.find("one.weight")->var->value, b.find("one.weight")->var->value));
    CHECK(same_bits(a.find("two.weight")->var->value, b.find("two.weight")->var->value));

    nn::initialize(b, 6);
    CHECK_FALSE(same_bits(a.find("one.weight")->var->value, b.find("one.weight")->var->value));
}

TEST_CASE("initialization honors the per-parameter rules") {
    nn::Registry reg;
    auto z = reg.add("z", {8}, nn::Init::kZero);
    auto o = reg.add("o", {8}, nn::Init::kOne);
    auto t = reg.add("t", {64, 64}, nn::Init::kTruncNormal, 64);
    auto f = reg.add("f", {16, 16, 3, 3}, nn::Init::kFanIn, 16 * 9);
    nn::initialize(reg, 123);

    CHECK(z->value.abs_max() == 0.0);
    for (std::int64_t i = 0; i < o->value.numel(); ++i) CHECK(o->value[i] == 1.0);
    CHECK(t->value.abs_max() <= 0.04);  // trunc normal, std 0.02, cut at 2 std
    CHECK(t->value.abs_max() > 0.0);
    CHECK(f->value.abs_max() > 0.0);
}

TEST_CASE("registry counts match the closed-form architecture arithmetic") {
    for (const ModelConfig& cfg : {desk_config(), default_paper_config()}) {
        Model model(cfg);
        const auto& reg = model.registry();
        CAPTURE(cfg.stage_channels[0]);
        CHECK(reg.count_with_prefix("encoder.") == encoder_p(cfg));
        CHECK(reg.count_with_prefix("decoder.") == decoder_p(cfg));
        CHECK(reg.count_with_prefix("heads.") == 5 * (cfg.decoder_channels + 1));
        CHECK(reg.total_count() == encoder_p(cfg) + decoder_p(cfg) + 5 * (cfg.decoder_channels + 1));
    }
}

TEST_CASE("budget audit reports the registry partition and a plausible flop split") {
    const runtime::BudgetReport report = runtime::budget_audit(desk_config());
    Model model(desk_config());
    CHECK(report.total_params == model.registry().total_count());
    CHECK(report.encoder_params == encoder_p(desk_config()));
    CHECK(report.total_params ==
          report.encoder_params + report.decoder_params + report.head_params);
    CHECK(report.total_flops ==
          report.conv_flops + report.linear_flops + report.attention_flops + report.fft_flops);
    CHECK(report.conv_flops > 0.0);
    CHECK(report.linear_flops > 0.0);
    CHECK(report.attention_flops > 0.0);
    CHECK(report.fft_flops > 0.0);
    CHECK(report.table().find("conv") != std::string::npos);
    CHECK(report.json().find("\"params\"") != std::string::npos);
    CHECK(report.json().find("\"flops\"") != std::string::npos);
}

TEST_CASE("checkpoints survive a save/load cycle bit for bit") {
    TempDir tmp;
    Config cfg;
    cfg.model = desk_config();
    Model model(cfg.model);
    nn::initialize(model.registry(), 42);
    runtime::Adam opt(model.registry());

    // One real step so the optimizer moments are nontrivial.
    std::mt19937 rng(1);
    model.set_training(true);
    auto image = ag::constant(glftest::random_tensor({1, 3, 96, 96}, rng, 0.0, 1.0));
    Tensor gt({1, 1, 96, 96});
    for (std::int64_t i = 0; i < gt.numel(); ++i) gt[i] = (i % 7 == 0) ? 1.0 : 0.0;
    auto out = model.forward(image);
    auto total = loss::total_loss(out, gt);
    ag::backward(total.value);
    opt.step(1e-3);
    model.set_training(false);

    RandomSource stream(99);
    stream.uniform01();
    const runtime::Checkpoint ck = runtime::snapshot(model, opt, cfg, 7, stream);

    const std::string p1 = (tmp.path / "a.ckpt").string();
    const std::string p2 = (tmp.path / "b.ckpt").string();
    runtime::save_checkpoint(ck, p1);
    const runtime::Checkpoint back = runtime::load_checkpoint(p1);

    CHECK(back.epoch == 7);
    CHECK(back.adam_step == 1);
    CHECK(back.config_text == ck.config_text);
    CHECK(back.rng_state == ck.rng_state);
    REQUIRE(back.params.size() == ck.params.size());
    for (size_t i = 0; i < ck.params.size(); ++i) {
        CHECK(back.params[i].first == ck.params[i].first);
        CHECK(same_bits(back.params[i].second, ck.params[i].second));
    }
    for (size_t i = 0; i < ck.adam_m.size(); ++i)
        CHECK(same_bits(back.adam_m[i].second, ck.adam_m[i].second));
    for (size_t i = 0; i < ck.buffers.size(); ++i)
        CHECK(same_bits(back.buffers[i].second, ck.buffers[i].second));

    runtime::save_checkpoint(back, p2);
    CHECK(slurp(p1) == slurp(p2));

    // A model rebuilt from the file reproduces the original forward exactly.
    auto rebuilt = runtime::model_from_checkpoint(back);
    const auto l0 = model.forward(image);
    const auto l1 = rebuilt->forward(image);
    for (int i = 0; i < 5; ++i) CHECK(same_bits(l0[i]->value, l1[i]->value));
}

TEST_CASE("corrupt or mismatched checkpoints are rejected") {
    TempDir tmp;
    const std::string garbled = (tmp.path / "garbled.ckpt").string();
    {
        std::ofstream out(garbled, std::ios::binary);
        out << "not a checkpoint at all";
    }
    CHECK_THROWS_AS(runtime::load_checkpoint(garbled), RuntimeFailure);
    CHECK_THROWS_AS(runtime::load_checkpoint((tmp.path / "absent.ckpt").string()), RuntimeFailure);

    Config cfg;
    cfg.model = desk_config();
    Model model(cfg.model);
    nn::initialize(model.registry(), 1);
    runtime::Adam opt(model.registry());
    RandomSource stream(1);
    runtime::Checkpoint ck = runtime::snapshot(model, opt, cfg, 1, stream);

    Model other(default_paper_config());
    CHECK_THROWS_AS(runtime::restore_model(other, ck), ValidationError);

    runtime::Checkpoint chopped = ck;
    chopped.params.pop_back();
    CHECK_THROWS_AS(runtime::restore_model(model, chopped), ValidationError);
}

TEST_CASE("an all-zero-gradient Adam step moves nothing") {
    Model model(desk_config());
    nn::initialize(model.registry(), 3);
    runtime::Adam opt(model.registry());
    opt.zero_grad();

    std::vector<Tensor> before;
    for (const auto& p : model.registry().params()) before.push_back(p.var->value);
    opt.step(1e-2);
    size_t i = 0;
    bool all_same = true;
    for (const auto& p : model.registry().params()) all_same &= same_bits(before[i++], p.var->value);
    CHECK(all_same);
    CHECK(opt.step_count() == 1);
}

TEST_CASE("Adam follows the bias-corrected reference recurrence") {
    nn::Registry reg;
    auto w = reg.add("w", {1}, nn::Init::kZero);
    w->value[0] = 0.5;
    runtime::Adam opt(reg);

    double m = 0.0, v = 0.0, x = 0.5;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 1e-2;
    const double grads[2] = {0.5, -0.25};
    for (int t = 1; t <= 2; ++t) {
        const double g = grads[t - 1];
        w->grad = Tensor({1});
        w->grad[0] = g;
        opt.step(lr);

        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t));
        const double vh = v / (1 - std::pow(b2, t));
        x -= lr * mh / (std::sqrt(vh) + eps);
        CHECK(w->value[0] == doctest::Approx(x).epsilon(1e-14));
    }
}

TEST_CASE("the step-decay schedule drops by the factor every interval") {
    TrainConfig t;
    t.learning_rate = 1e-4;
    t.lr_decay_factor = 0.1;
    t.lr_decay_every = 40;
    CHECK(runtime::scheduled_lr(t, 1) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(runtime::scheduled_lr(t, 40) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(runtime::scheduled_lr(t, 41) == doctest::Approx(1e-5).epsilon(1e-12));
    CHECK(runtime::scheduled_lr(t, 80) == doctest::Approx(1e-5).epsilon(1e-12));
    CHECK(runtime::scheduled_lr(t, 81) == doctest::Approx(1e-6).epsilon(1e-12));
}

TEST_CASE("after two optimizer steps gradients reach every parameter") {
    Model model(desk_config());
    nn::initialize(model.registry(), 11);
    runtime::Adam opt(model.registry());
    model.set_training(true);

    std::mt19937 rng(4);
    auto image = ag::constant(glftest::random_tensor({2, 3, 96, 96}, rng, 0.0, 1.0));
    Tensor gt({2, 1, 96, 96});
    for (std::int64_t i = 0; i < gt.numel(); ++i) gt[i] = (i % 3 == 0) ? 1.0 : 0.0;

    // Zero-initialized output projections nest two deep (the level fusion
    // gates the cross-fusion block, which gates its own branches), so the
    // innermost parameters only see gradient once both projections have
    // taken a step.
    for (int s = 0; s < 2; ++s) {
        auto total = loss::total_loss(model.forward(image), gt);
        ag::backward(total.value);
        opt.step(1e-3);
        opt.zero_grad();
    }

    auto total2 = loss::total_loss(model.forward(image), gt);
    ag::backward(total2.value);
    int dead = 0;
    for (const auto& p : model.registry().params()) {
        const bool live = !p.var->grad.empty() && p.var->grad.abs_max() > 0.0;
        if (!live) {
            ++dead;
            MESSAGE("no gradient reached ", p.name);
        }
    }
    CHECK(dead == 0);
}
