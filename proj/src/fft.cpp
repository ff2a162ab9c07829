// SPDX-License-Identifier: Apache-2.0
#include "glformer/fft.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace glformer::fftops {

namespace {

constexpr double kPi = 3.14159265358979323846;

int smallest_factor(int n) {
    for (int p = 2; p * p <= n; ++p)
        if (n % p == 0) return p;
    return n;
}

std::vector<cplx> make_table(int n, bool inverse) {
    std::vector<cplx> w(static_cast<size_t>(n));
    const double sgn = inverse ? 2.0 * kPi / n : -2.0 * kPi / n;
    for (int j = 0; j < n; ++j) w[static_cast<size_t>(j)] = cplx(std::cos(sgn * j), std::sin(sgn * j));
    return w;
}

// Recursive mixed-radix transform. Input is strided by s, output lands
// contiguously in y. The twiddle table w belongs to the top-level length
// N = w.size(); ws scales sub-length indices back into that table.
void fft_rec(int n, int s, const cplx* x, cplx* y, cplx* scratch, const std::vector<cplx>& w, long long ws) {
    if (n == 1) {
        y[0] = x[0];
        return;
    }
    const long long big_n = static_cast<long long>(w.size());
    const int p = smallest_factor(n);
    if (p == n) {
        for (int k = 0; k < n; ++k) {
            cplx acc(0.0, 0.0);
            for (int q = 0; q < n; ++q) {
                const long long idx = (static_cast<long long>(k) * q) % n * ws % big_n;
                acc += x[static_cast<size_t>(q) * s] * w[static_cast<size_t>(idx)];
            }
            y[k] = acc;
        }
        return;
    }
    const int m = n / p;
    for (int q = 0; q < p; ++q)
        fft_rec(m, s * p, x + static_cast<size_t>(q) * s, y + static_cast<size_t>(q) * m, scratch, w, ws * p);
    for (int r = 0; r < p; ++r) {
        const long long rm = static_cast<long long>(r) * m;
        for (int k = 0; k < m; ++k) {
            const long long base = (k + rm) * ws % big_n;
            cplx acc(0.0, 0.0);
            for (int q = 0; q < p; ++q) {
                const long long idx = base * q % big_n;
                acc += y[static_cast<size_t>(q) * m + k] * w[static_cast<size_t>(idx)];
            }
            scratch[rm + k] = acc;
        }
    }
    std::copy(scratch, scratch + n, y);
}

}  // namespace

void fft1d(cplx* data, int n, bool inverse) {
    if (n <= 1) return;
    const std::vector<cplx> w = make_table(n, inverse);
    std::vector<cplx> y(static_cast<size_t>(n)), scratch(static_cast<size_t>(n));
    fft_rec(n, 1, data, y.data(), scratch.data(), w, 1);
    std::copy(y.begin(), y.end(), data);
}

void fft2d(cplx* data, int h, int w, bool inverse) {
    if (w > 1) {
        const std::vector<cplx> tbl = make_table(w, inverse);
        std::vector<cplx> y(static_cast<size_t>(w)), scratch(static_cast<size_t>(w));
        for (int r = 0; r < h; ++r) {
            cplx* row = data + static_cast<size_t>(r) * w;
            fft_rec(w, 1, row, y.data(), scratch.data(), tbl, 1);
            std::copy(y.begin(), y.end(), row);
        }
    }
    if (h > 1) {
        const std::vector<cplx> tbl = make_table(h, inverse);
        std::vector<cplx> y(static_cast<size_t>(h)), scratch(static_cast<size_t>(h));
        for (int c = 0; c < w; ++c) {
            fft_rec(h, w, data + c, y.data(), scratch.data(), tbl, 1);
            for (int r = 0; r < h; ++r) data[static_cast<size_t>(r) * w + c] = y[static_cast<size_t>(r)];
        }
    }
}

namespace {

void check_spectrum_shape(const Tensor& s) {
    if (s.ndim() != 4) throw std::invalid_argument("spectrum must be rank 4");
    if (s.dim(1) % 2 != 0) throw std::invalid_argument("spectrum channel count must be even");
}

}  // namespace

Tensor rfft2(const Tensor& x) {
    if (x.ndim() != 4) throw std::invalid_argument("rfft2 expects (B,C,H,W)");
    const int nb = x.dim(0), nc = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int wf = half_width(w);
    Tensor out({nb, 2 * nc, h, wf});
    std::vector<cplx> buf(static_cast<size_t>(h) * w);
    for (int b = 0; b < nb; ++b) {
        for (int c = 0; c < nc; ++c) {
            for (int v = 0; v < h; ++v)
                for (int u = 0; u < w; ++u)
                    buf[static_cast<size_t>(v) * w + u] = cplx(x.at4(b, c, v, u), 0.0);
            fft2d(buf.data(), h, w, false);
            for (int v = 0; v < h; ++v)
                for (int u = 0; u < wf; ++u) {
                    const cplx z = buf[static_cast<size_t>(v) * w + u];
                    out.at4(b, c, v, u) = z.real();
                    out.at4(b, nc + c, v, u) = z.imag();
                }
        }
    }
    return out;
}

Tensor irfft2(const Tensor& s, int w_full) {
    check_spectrum_shape(s);
    const int nb = s.dim(0), nc = s.dim(1) / 2, h = s.dim(2), wf = s.dim(3);
    if (wf != half_width(w_full)) throw std::invalid_argument("spectrum width does not match target width");
    Tensor out({nb, nc, h, w_full});
    const double norm = 1.0 / (static_cast<double>(w_full) * h);
    std::vector<cplx> buf(static_cast<size_t>(h) * w_full);
    for (int b = 0; b < nb; ++b) {
        for (int c = 0; c < nc; ++c) {
            for (int v = 0; v < h; ++v) {
                for (int u = 0; u < w_full; ++u) {
                    cplx z;
                    if (u < wf) {
                        z = cplx(s.at4(b, c, v, u), s.at4(b, nc + c, v, u));
                    } else {
                        const int mv = (h - v) % h;
                        const int mu = w_full - u;
                        z = cplx(s.at4(b, c, mv, mu), -s.at4(b, nc + c, mv, mu));
                    }
                    buf[static_cast<size_t>(v) * w_full + u] = z;
                }
            }
            fft2d(buf.data(), h, w_full, true);
            for (int v = 0; v < h; ++v)
                for (int u = 0; u < w_full; ++u)
                    out.at4(b, c, v, u) = buf[static_cast<size_t>(v) * w_full + u].real() * norm;
        }
    }
    return out;
}

Tensor rfft2_adjoint(const Tensor& g, int w_full) {
    check_spectrum_shape(g);
    const int nb = g.dim(0), nc = g.dim(1) / 2, h = g.dim(2), wf = g.dim(3);
    if (wf != half_width(w_full)) throw std::invalid_argument("spectrum width does not match target width");
    Tensor out({nb, nc, h, w_full});
    std::vector<cplx> buf(static_cast<size_t>(h) * w_full);
    for (int b = 0; b < nb; ++b) {
        for (int c = 0; c < nc; ++c) {
            for (int v = 0; v < h; ++v)
                for (int u = 0; u < w_full; ++u)
                    buf[static_cast<size_t>(v) * w_full + u] =
                        (u < wf) ? cplx(g.at4(b, c, v, u), g.at4(b, nc + c, v, u)) : cplx(0.0, 0.0);
            fft2d(buf.data(), h, w_full, true);
            for (int v = 0; v < h; ++v)
                for (int u = 0; u < w_full; ++u)
                    out.at4(b, c, v, u) = buf[static_cast<size_t>(v) * w_full + u].real();
        }
    }
    return out;
}

Tensor irfft2_adjoint(const Tensor& g) {
    if (g.ndim() != 4) throw std::invalid_argument("irfft2_adjoint expects (B,C,H,W)");
    const int nb = g.dim(0), nc = g.dim(1), h = g.dim(2), w = g.dim(3);
    const int wf = half_width(w);
    Tensor out({nb, 2 * nc, h, wf});
    const double norm = 1.0 / (static_cast<double>(w) * h);
    std::vector<cplx> buf(static_cast<size_t>(h) * w);
    for (int b = 0; b < nb; ++b) {
        for (int c = 0; c < nc; ++c) {
            for (int v = 0; v < h; ++v)
                for (int u = 0; u < w; ++u)
                    buf[static_cast<size_t>(v) * w + u] = cplx(g.at4(b, c, v, u), 0.0);
            fft2d(buf.data(), h, w, false);
            for (int v = 0; v < h; ++v)
                for (int u = 0; u < wf; ++u) {
                    const double mult = (u == 0 || (w % 2 == 0 && u == w / 2)) ? 1.0 : 2.0;
                    const cplx z = buf[static_cast<size_t>(v) * w + u];
                    out.at4(b, c, v, u) = mult * norm * z.real();
                    out.at4(b, nc + c, v, u) = mult * norm * z.imag();
                }
        }
    }
    return out;
}

}  // namespace glformer::fftops
