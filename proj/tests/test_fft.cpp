// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <complex>
#include <random>
#include <vector>

#include "doctest.h"
#include "fd_check.hpp"
#include "glformer/fft.hpp"

using glformer::Tensor;
namespace fftops = glformer::fftops;
using cplx = std::complex<double>;

namespace {

// Reference transform written directly from the double-sum definition:
// F(v,u) = sum_y sum_x f(y,x) * exp(-i 2 pi (u x / W + v y / H)).
// Kept deliberately naive and independent of the library implementation.
std::vector<cplx> naive_dft2(const std::vector<double>& f, int h, int w) {
    const double pi = 3.14159265358979323846;
    std::vector<cplx> out(static_cast<size_t>(h) * w);
    for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u) {
            cplx acc(0.0, 0.0);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const double ang = -2.0 * pi * (static_cast<double>(u) * x / w + static_cast<double>(v) * y / h);
                    acc += f[static_cast<size_t>(y) * w + x] * cplx(std::cos(ang), std::sin(ang));
                }
            out[static_cast<size_t>(v) * w + u] = acc;
        }
    return out;
}

std::vector<double> random_map(int h, int w, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> f(static_cast<size_t>(h) * w);
    for (auto& v : f) v = dist(rng);
    return f;
}

Tensor wrap_map(const std::vector<double>& f, int h, int w) {
    Tensor t({1, 1, h, w});
    std::copy(f.begin(), f.end(), t.data());
    return t;
}

}  // namespace

TEST_CASE("forward transform matches the double-sum definition for all sizes up to 8x8") {
    for (int h = 1; h <= 8; ++h)
        for (int w = 1; w <= 8; ++w) {
            const auto f = random_map(h, w, static_cast<unsigned>(100 + h * 17 + w));
            const auto ref = naive_dft2(f, h, w);
            const Tensor spec = fftops::rfft2(wrap_map(f, h, w));
            const int wf = fftops::half_width(w);
            REQUIRE(spec.shape() == std::vector<int>{1, 2, h, wf});
            for (int v = 0; v < h; ++v)
                for (int u = 0; u < wf; ++u) {
                    const cplx r = ref[static_cast<size_t>(v) * w + u];
                    CHECK(std::fabs(spec.at4(0, 0, v, u) - r.real()) < 1e-6);
                    CHECK(std::fabs(spec.at4(0, 1, v, u) - r.imag()) < 1e-6);
                }
        }
}

TEST_CASE("mixed-radix sizes with prime factors match the definition") {
    for (int w : {11, 22, 24, 88}) {
        const int h = 3;
        const auto f = random_map(h, w, static_cast<unsigned>(7000 + w));
        const auto ref = naive_dft2(f, h, w);
        const Tensor spec = fftops::rfft2(wrap_map(f, h, w));
        const int wf = fftops::half_width(w);
        double worst = 0.0;
        for (int v = 0; v < h; ++v)
            for (int u = 0; u < wf; ++u) {
                const cplx r = ref[static_cast<size_t>(v) * w + u];
                worst = std::max(worst, std::fabs(spec.at4(0, 0, v, u) - r.real()));
                worst = std::max(worst, std::fabs(spec.at4(0, 1, v, u) - r.imag()));
            }
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("round trip reconstructs the input") {
    for (auto [h, w] : std::vector<std::pair<int, int>>{{8, 8}, {5, 7}, {12, 11}, {24, 24}, {1, 1}, {2, 6}}) {
        const auto f = random_map(h, w, static_cast<unsigned>(900 + h * 31 + w));
        const Tensor x = wrap_map(f, h, w);
        const Tensor back = fftops::irfft2(fftops::rfft2(x), w);
        double worst = 0.0;
        for (std::int64_t i = 0; i < x.numel(); ++i) worst = std::max(worst, std::fabs(back[i] - x[i]));
        CHECK(worst < 1e-5);
    }
}

TEST_CASE("energy is preserved (Parseval)") {
    for (auto [h, w] : std::vector<std::pair<int, int>>{{8, 8}, {6, 10}, {7, 5}, {16, 12}}) {
        const auto f = random_map(h, w, static_cast<unsigned>(40 + h + w));
        double space = 0.0;
        for (double v : f) space += v * v;
        const auto ref = naive_dft2(f, h, w);
        double freq = 0.0;
        for (const cplx& z : ref) freq += std::norm(z);
        freq /= static_cast<double>(h) * w;
        CHECK(std::fabs(space - freq) < 1e-4);

        // Same identity from the half-spectrum storage with mirror weights.
        const Tensor spec = fftops::rfft2(wrap_map(f, h, w));
        const int wf = fftops::half_width(w);
        double freq_half = 0.0;
        for (int v = 0; v < h; ++v)
            for (int u = 0; u < wf; ++u) {
                const double m = (u == 0 || (w % 2 == 0 && u == w / 2)) ? 1.0 : 2.0;
                const double re = spec.at4(0, 0, v, u), im = spec.at4(0, 1, v, u);
                freq_half += m * (re * re + im * im);
            }
        freq_half /= static_cast<double>(h) * w;
        CHECK(std::fabs(space - freq_half) < 1e-4);
    }
}

TEST_CASE("transforms are linear") {
    const int h = 6, w = 9;
    const auto fa = random_map(h, w, 1);
    const auto fb = random_map(h, w, 2);
    std::vector<double> mix(fa.size());
    for (size_t i = 0; i < mix.size(); ++i) mix[i] = 2.0 * fa[i] - 0.5 * fb[i];
    const Tensor sa = fftops::rfft2(wrap_map(fa, h, w));
    const Tensor sb = fftops::rfft2(wrap_map(fb, h, w));
    const Tensor sm = fftops::rfft2(wrap_map(mix, h, w));
    double worst = 0.0;
    for (std::int64_t i = 0; i < sm.numel(); ++i) worst = std::max(worst, std::fabs(sm[i] - (2.0 * sa[i] - 0.5 * sb[i])));
    CHECK(worst < 1e-9);
}

TEST_CASE("adjoint operators satisfy the inner-product identity") {
    // <A x, y> == <x, At y> for both directions of the transform.
    std::mt19937 rng(33);
    for (auto [h, w] : std::vector<std::pair<int, int>>{{4, 6}, {5, 5}, {3, 8}}) {
        const int wf = fftops::half_width(w);
        Tensor x = glftest::random_tensor({2, 1, h, w}, rng);
        Tensor y({2, 2, h, wf});
        for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = std::uniform_real_distribution<double>(-1, 1)(rng);

        const Tensor ax = fftops::rfft2(x);
        const Tensor aty = fftops::rfft2_adjoint(y, w);
        double lhs = 0.0, rhs = 0.0;
        for (std::int64_t i = 0; i < ax.numel(); ++i) lhs += ax[i] * y[i];
        for (std::int64_t i = 0; i < x.numel(); ++i) rhs += x[i] * aty[i];
        CHECK(std::fabs(lhs - rhs) < 1e-8 * (1.0 + std::fabs(lhs)));

        const Tensor iy = fftops::irfft2(y, w);
        const Tensor itx = fftops::irfft2_adjoint(x);
        lhs = rhs = 0.0;
        for (std::int64_t i = 0; i < iy.numel(); ++i) lhs += iy[i] * x[i];
        for (std::int64_t i = 0; i < y.numel(); ++i) rhs += y[i] * itx[i];
        CHECK(std::fabs(lhs - rhs) < 1e-8 * (1.0 + std::fabs(lhs)));
    }
}

TEST_CASE("spectral autograd ops pass finite-difference checks") {
    std::mt19937 rng(5);
    auto x = glformer::ag::parameter(glftest::random_tensor({1, 2, 4, 6}, rng), "x");
    auto build_fwd = [&]() { return glftest::weighted_sum(glformer::ag::rfft2(x)); };
    CHECK(glftest::max_fd_rel_error(build_fwd, {x}) < 1e-6);

    auto s = glformer::ag::parameter(glftest::random_tensor({1, 4, 4, 4}, rng), "s");
    auto build_inv = [&]() { return glftest::weighted_sum(glformer::ag::irfft2(s, 6)); };
    CHECK(glftest::max_fd_rel_error(build_inv, {s}) < 1e-6);

    auto lam = glformer::ag::parameter(glftest::random_tensor({1, 2, 5, 4}, rng), "lam");
    auto build_bal = [&]() { return glftest::weighted_sum(glformer::ag::hermitian_balance(lam, 6)); };
    CHECK(glftest::max_fd_rel_error(build_bal, {lam}) < 1e-6);
}
