// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "fd_check.hpp"
#include "glformer/nn.hpp"
#include "glformer/spectral_merge.hpp"

using namespace glformer;
using glftest::max_fd_rel_error;
using glftest::random_tensor;
using glftest::weighted_sum;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    double worst = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
    return worst;
}

void fill_identity_1x1(nn::Conv2d& conv) {
    Tensor& w = conv.weight->value;
    w.fill(0.0);
    const int cout = w.dim(0);
    for (int c = 0; c < cout; ++c) w.at4(c, c, 0, 0) = 1.0;
    conv.bias->value.fill(0.0);
}

}  // namespace

TEST_CASE("gain is exactly 1 at zero initialization and bounded in (0,2) after") {
    nn::Registry reg;
    SpectralMerge merge(reg, "merge", 4);
    std::mt19937 rng(3);
    auto sl = ag::constant(random_tensor({1, 8, 5, 4}, rng));  // spectra carry 2C channels
    auto sg = ag::constant(random_tensor({1, 8, 5, 4}, rng));

    // All-zero parameters: both sigmoids see zero, so the gain is 0.5 + 0.5.
    const Tensor g0 = merge.gain(sl, sg)->value;
    CHECK(g0.shape() == std::vector<int>{1, 4, 5, 4});
    CHECK(max_abs_diff(g0, Tensor::full(g0.shape(), 1.0)) == 0.0);

    nn::initialize(reg, 17);
    const Tensor g1 = merge.gain(sl, sg)->value;
    for (std::int64_t i = 0; i < g1.numel(); ++i) {
        CHECK(g1[i] > 0.0);
        CHECK(g1[i] < 2.0);
    }
}

TEST_CASE("zero branches leave the residual untouched, before and after init") {
    for (const bool init : {false, true}) {
        nn::Registry reg;
        SpectralMerge merge(reg, "merge", 4);
        if (init) nn::initialize(reg, 5);
        std::mt19937 rng(9);
        auto zero = ag::constant(Tensor({2, 4, 6, 6}));
        auto residual = ag::constant(random_tensor({2, 4, 6, 6}, rng));
        const Tensor out = merge(zero, zero, residual)->value;
        CAPTURE(init);
        CHECK(max_abs_diff(out, residual->value) == 0.0);
    }
}

TEST_CASE("with unit gain and identity projection the merge is 2(local+global)+residual") {
    nn::Registry reg;
    SpectralMerge merge(reg, "merge", 3, /*zero_init_out=*/false);
    nn::initialize(reg, 21);

    // Surgery: silence the gain mixers so the gain is exactly 1 everywhere,
    // and make the output projection the identity. The frequency-domain
    // path then collapses to pure linearity.
    merge.mix_out_local.weight->value.fill(0.0);
    merge.mix_out_local.bias->value.fill(0.0);
    merge.mix_out_global.weight->value.fill(0.0);
    merge.mix_out_global.bias->value.fill(0.0);
    fill_identity_1x1(merge.out_proj);

    std::mt19937 rng(33);
    auto local = ag::constant(random_tensor({1, 3, 6, 7}, rng));
    auto global_ = ag::constant(random_tensor({1, 3, 6, 7}, rng));
    auto residual = ag::constant(random_tensor({1, 3, 6, 7}, rng));

    const Tensor out = merge(local, global_, residual)->value;
    Tensor expect(out.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i)
        expect[i] = 2.0 * (local->value[i] + global_->value[i]) + residual->value[i];
    CHECK(max_abs_diff(out, expect) < 1e-5);
}

TEST_CASE("the balanced spectrum stays conjugate-symmetric (no imaginary residue)") {
    nn::Registry reg;
    SpectralMerge merge(reg, "merge", 4);
    nn::initialize(reg, 41);

    // Rebuild the merged spectrum from public pieces, return to pixels, and
    // transform again: a Hermitian spectrum survives the round trip.
    for (const auto& shape : {std::vector<int>{1, 4, 6, 6}, {1, 4, 5, 7}, {2, 4, 8, 4}}) {
        std::mt19937 rng(static_cast<unsigned>(7 + shape[2]));
        auto local = ag::constant(random_tensor(shape, rng));
        auto global_ = ag::constant(random_tensor(shape, rng));
        const int w_full = shape[3];

        auto spec_l = ag::rfft2(local);
        auto spec_g = ag::rfft2(global_);
        auto lam = ag::hermitian_balance(merge.gain(spec_l, spec_g), w_full);
        auto lam2 = ag::concat_c({lam, lam});
        auto sum_spec = ag::add(spec_l, spec_g);
        auto merged = ag::add(ag::mul(lam2, sum_spec), sum_spec);

        auto pixels = ag::irfft2(merged, w_full);
        auto back = ag::rfft2(pixels);
        CAPTURE(shape[2]);
        CAPTURE(shape[3]);
        CHECK(max_abs_diff(back->value, merged->value) < 1e-5);
    }
}

TEST_CASE("merge output keeps the input shape across sizes") {
    nn::Registry reg;
    SpectralMerge merge(reg, "merge", 5);
    nn::initialize(reg, 2);
    for (const auto& shape : {std::vector<int>{1, 5, 4, 4}, {2, 5, 7, 5}, {1, 5, 3, 8}}) {
        std::mt19937 rng(1);
        auto a = ag::constant(random_tensor(shape, rng));
        auto b = ag::constant(random_tensor(shape, rng));
        auto r = ag::constant(random_tensor(shape, rng));
        CHECK(merge(a, b, r)->value.shape() == shape);
    }
}

TEST_CASE("gradients through the full merge pass finite differences") {
    nn::Registry reg;
    SpectralMerge merge(reg, "merge", 4);
    nn::initialize(reg, 13);
    // The output projection initializes to zero, which would zero every
    // upstream gradient; give it generic values for the check.
    std::mt19937 rng(55);
    merge.out_proj.weight->value = random_tensor({4, 4, 1, 1}, rng, -0.5, 0.5);

    auto local = ag::parameter(random_tensor({1, 4, 6, 6}, rng), "local");
    auto global_ = ag::parameter(random_tensor({1, 4, 6, 6}, rng), "global");
    auto residual = ag::parameter(random_tensor({1, 4, 6, 6}, rng), "residual");

    const std::vector<ag::VarPtr> wrt = {local, global_, residual, merge.mix_in_local.weight,
                                         merge.mix_out_global.weight, merge.out_proj.weight,
                                         merge.bn_local.gamma};
    const double err = max_fd_rel_error(
        [&] { return weighted_sum(merge(local, global_, residual)); }, wrt, 1e-4);
    CHECK(err < 1e-3);
}
