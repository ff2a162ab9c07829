// SPDX-License-Identifier: Apache-2.0
#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>

#include "glformer/ops.hpp"

namespace glformer::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

struct ConvDims {
    int nb, cin, h, w;
    int cout, kh, kw;
    int stride, pad, dil, groups;
    int ho, wo, cin_g, cout_g, k2;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad, int dil, int groups) {
    if (x.ndim() != 4 || w.ndim() != 4) throw std::invalid_argument("conv2d: expects 4-d input and weight");
    ConvDims d;
    d.nb = x.dim(0);
    d.cin = x.dim(1);
    d.h = x.dim(2);
    d.w = x.dim(3);
    d.cout = w.dim(0);
    d.kh = w.dim(2);
    d.kw = w.dim(3);
    d.stride = stride;
    d.pad = pad;
    d.dil = dil;
    d.groups = groups;
    if (groups < 1 || d.cin % groups != 0 || d.cout % groups != 0)
        throw std::invalid_argument("conv2d: channels not divisible by groups");
    d.cin_g = d.cin / groups;
    d.cout_g = d.cout / groups;
    if (w.dim(1) != d.cin_g) throw std::invalid_argument("conv2d: weight input channels mismatch");
    d.ho = (d.h + 2 * pad - dil * (d.kh - 1) - 1) / stride + 1;
    d.wo = (d.w + 2 * pad - dil * (d.kw - 1) - 1) / stride + 1;
    if (d.ho < 1 || d.wo < 1) throw std::invalid_argument("conv2d: output would be empty");
    d.k2 = d.kh * d.kw;
    return d;
}

// Gathers one group's receptive fields into a (cin_g*k2, ho*wo) matrix.
void im2col(const double* x, const ConvDims& d, double* cols) {
    const std::int64_t n = static_cast<std::int64_t>(d.ho) * d.wo;
    for (int ci = 0; ci < d.cin_g; ++ci) {
        const double* xc = x + static_cast<std::int64_t>(ci) * d.h * d.w;
        for (int ky = 0; ky < d.kh; ++ky)
            for (int kx = 0; kx < d.kw; ++kx) {
                double* row = cols + (static_cast<std::int64_t>(ci) * d.k2 + ky * d.kw + kx) * n;
                for (int oy = 0; oy < d.ho; ++oy) {
                    const int iy = oy * d.stride - d.pad + ky * d.dil;
                    double* rp = row + static_cast<std::int64_t>(oy) * d.wo;
                    if (iy < 0 || iy >= d.h) {
                        for (int ox = 0; ox < d.wo; ++ox) rp[ox] = 0.0;
                        continue;
                    }
                    const double* xr = xc + static_cast<std::int64_t>(iy) * d.w;
                    for (int ox = 0; ox < d.wo; ++ox) {
                        const int ix = ox * d.stride - d.pad + kx * d.dil;
                        rp[ox] = (ix >= 0 && ix < d.w) ? xr[ix] : 0.0;
                    }
                }
            }
    }
}

// Scatter-adds a (cin_g*k2, ho*wo) cotangent matrix back onto the image.
void col2im_add(const double* cols, const ConvDims& d, double* gx) {
    const std::int64_t n = static_cast<std::int64_t>(d.ho) * d.wo;
    for (int ci = 0; ci < d.cin_g; ++ci) {
        double* xc = gx + static_cast<std::int64_t>(ci) * d.h * d.w;
        for (int ky = 0; ky < d.kh; ++ky)
            for (int kx = 0; kx < d.kw; ++kx) {
                const double* row = cols + (static_cast<std::int64_t>(ci) * d.k2 + ky * d.kw + kx) * n;
                for (int oy = 0; oy < d.ho; ++oy) {
                    const int iy = oy * d.stride - d.pad + ky * d.dil;
                    if (iy < 0 || iy >= d.h) continue;
                    const double* rp = row + static_cast<std::int64_t>(oy) * d.wo;
                    double* xr = xc + static_cast<std::int64_t>(iy) * d.w;
                    for (int ox = 0; ox < d.wo; ++ox) {
                        const int ix = ox * d.stride - d.pad + kx * d.dil;
                        if (ix >= 0 && ix < d.w) xr[ix] += rp[ox];
                    }
                }
            }
    }
}

bool is_depthwise(const ConvDims& d) { return d.groups == d.cin && d.cout == d.cin; }

}  // namespace

VarPtr conv2d(const VarPtr& x, const VarPtr& w, const VarPtr& b, int stride, int pad, int dilation, int groups) {
    const ConvDims d = conv_dims(x->value, w->value, stride, pad, dilation, groups);
    if (b && b->value.numel() != d.cout) throw std::invalid_argument("conv2d: bias size mismatch");
    if (auto* fc = flop_counter())
        fc->conv += 2.0 * d.k2 * d.cin_g * d.cout * static_cast<double>(d.ho) * d.wo * d.nb;

    Tensor y({d.nb, d.cout, d.ho, d.wo});
    const std::int64_t n = static_cast<std::int64_t>(d.ho) * d.wo;
    const std::int64_t in_img = static_cast<std::int64_t>(d.cin) * d.h * d.w;
    const std::int64_t out_img = static_cast<std::int64_t>(d.cout) * n;

    if (is_depthwise(d)) {
        for (int bi = 0; bi < d.nb; ++bi)
            for (int c = 0; c < d.cin; ++c) {
                const double* xc = x->value.data() + bi * in_img + static_cast<std::int64_t>(c) * d.h * d.w;
                const double* wc = w->value.data() + static_cast<std::int64_t>(c) * d.k2;
                const double bias = b ? b->value[c] : 0.0;
                double* yc = y.data() + bi * out_img + static_cast<std::int64_t>(c) * n;
                for (int oy = 0; oy < d.ho; ++oy)
                    for (int ox = 0; ox < d.wo; ++ox) {
                        double acc = bias;
                        for (int ky = 0; ky < d.kh; ++ky) {
                            const int iy = oy * d.stride - d.pad + ky * d.dil;
                            if (iy < 0 || iy >= d.h) continue;
                            for (int kx = 0; kx < d.kw; ++kx) {
                                const int ix = ox * d.stride - d.pad + kx * d.dil;
                                if (ix >= 0 && ix < d.w) acc += wc[ky * d.kw + kx] * xc[static_cast<std::int64_t>(iy) * d.w + ix];
                            }
                        }
                        yc[static_cast<std::int64_t>(oy) * d.wo + ox] = acc;
                    }
            }
    } else {
        const std::int64_t k = static_cast<std::int64_t>(d.cin_g) * d.k2;
        std::vector<double> cols(static_cast<size_t>(k * n));
        for (int bi = 0; bi < d.nb; ++bi)
            for (int g = 0; g < d.groups; ++g) {
                const double* xg = x->value.data() + bi * in_img + static_cast<std::int64_t>(g) * d.cin_g * d.h * d.w;
                im2col(xg, d, cols.data());
                CMapMat wm(w->value.data() + static_cast<std::int64_t>(g) * d.cout_g * k, d.cout_g, k);
                CMapMat cm(cols.data(), k, n);
                MapMat ym(y.data() + bi * out_img + static_cast<std::int64_t>(g) * d.cout_g * n, d.cout_g, n);
                ym.noalias() = wm * cm;
            }
        if (b) {
            for (int bi = 0; bi < d.nb; ++bi)
                for (int c = 0; c < d.cout; ++c) {
                    double* yc = y.data() + bi * out_img + static_cast<std::int64_t>(c) * n;
                    const double bias = b->value[c];
                    for (std::int64_t i = 0; i < n; ++i) yc[i] += bias;
                }
        }
    }

    std::vector<VarPtr> inputs = b ? std::vector<VarPtr>{x, w, b} : std::vector<VarPtr>{x, w};
    return detail::make_node(std::move(y), std::move(inputs), [x, w, b, d](Var& out) {
        const std::int64_t n = static_cast<std::int64_t>(d.ho) * d.wo;
        const std::int64_t in_img = static_cast<std::int64_t>(d.cin) * d.h * d.w;
        const std::int64_t out_img = static_cast<std::int64_t>(d.cout) * n;
        if (b && b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (int bi = 0; bi < d.nb; ++bi)
                for (int c = 0; c < d.cout; ++c) {
                    const double* op = out.grad.data() + bi * out_img + static_cast<std::int64_t>(c) * n;
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < n; ++i) acc += op[i];
                    gb[c] += acc;
                }
        }
        if (is_depthwise(d)) {
            Tensor* gx = x->requires_grad ? &x->ensure_grad() : nullptr;
            Tensor* gw = w->requires_grad ? &w->ensure_grad() : nullptr;
            if (!gx && !gw) return;
            for (int bi = 0; bi < d.nb; ++bi)
                for (int c = 0; c < d.cin; ++c) {
                    const double* xc = x->value.data() + bi * in_img + static_cast<std::int64_t>(c) * d.h * d.w;
                    const double* wc = w->value.data() + static_cast<std::int64_t>(c) * d.k2;
                    const double* op = out.grad.data() + bi * out_img + static_cast<std::int64_t>(c) * n;
                    double* gxc = gx ? gx->data() + bi * in_img + static_cast<std::int64_t>(c) * d.h * d.w : nullptr;
                    double* gwc = gw ? gw->data() + static_cast<std::int64_t>(c) * d.k2 : nullptr;
                    for (int oy = 0; oy < d.ho; ++oy)
                        for (int ox = 0; ox < d.wo; ++ox) {
                            const double g = op[static_cast<std::int64_t>(oy) * d.wo + ox];
                            for (int ky = 0; ky < d.kh; ++ky) {
                                const int iy = oy * d.stride - d.pad + ky * d.dil;
                                if (iy < 0 || iy >= d.h) continue;
                                for (int kx = 0; kx < d.kw; ++kx) {
                                    const int ix = ox * d.stride - d.pad + kx * d.dil;
                                    if (ix < 0 || ix >= d.w) continue;
                                    const std::int64_t xi = static_cast<std::int64_t>(iy) * d.w + ix;
                                    if (gxc) gxc[xi] += g * wc[ky * d.kw + kx];
                                    if (gwc) gwc[ky * d.kw + kx] += g * xc[xi];
                                }
                            }
                        }
                }
            return;
        }
        const std::int64_t k = static_cast<std::int64_t>(d.cin_g) * d.k2;
        std::vector<double> cols(static_cast<size_t>(k * n));
        std::vector<double> gcols(static_cast<size_t>(k * n));
        Tensor* gx = x->requires_grad ? &x->ensure_grad() : nullptr;
        Tensor* gw = w->requires_grad ? &w->ensure_grad() : nullptr;
        if (!gx && !gw) return;
        for (int bi = 0; bi < d.nb; ++bi)
            for (int g = 0; g < d.groups; ++g) {
                CMapMat gy(out.grad.data() + bi * out_img + static_cast<std::int64_t>(g) * d.cout_g * n, d.cout_g, n);
                CMapMat wm(w->value.data() + static_cast<std::int64_t>(g) * d.cout_g * k, d.cout_g, k);
                if (gw) {
                    const double* xg =
                        x->value.data() + bi * in_img + static_cast<std::int64_t>(g) * d.cin_g * d.h * d.w;
                    im2col(xg, d, cols.data());
                    CMapMat cm(cols.data(), k, n);
                    MapMat gwm(gw->data() + static_cast<std::int64_t>(g) * d.cout_g * k, d.cout_g, k);
                    gwm.noalias() += gy * cm.transpose();
                }
                if (gx) {
                    MapMat gc(gcols.data(), k, n);
                    gc.noalias() = wm.transpose() * gy;
                    double* gxg = gx->data() + bi * in_img + static_cast<std::int64_t>(g) * d.cin_g * d.h * d.w;
                    col2im_add(gcols.data(), d, gxg);
                }
            }
    });
}

}  // namespace glformer::ag
