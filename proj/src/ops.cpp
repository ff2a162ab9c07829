// SPDX-License-Identifier: Apache-2.0
#include "glformer/ops.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "glformer/fft.hpp"

namespace glformer::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

using detail::accum_all;
using detail::make_node;

void check_same_shape(const VarPtr& a, const VarPtr& b, const char* op) {
    if (!a->value.same_shape(b->value))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a->value.shape_str() + " vs " +
                                    b->value.shape_str());
}

}  // namespace

VarPtr add(const VarPtr& a, const VarPtr& b) {
    check_same_shape(a, b, "add");
    Tensor y(a->value.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = a->value[i] + b->value[i];
    return make_node(std::move(y), {a, b}, [a, b](Var& out) {
        if (a->requires_grad) accum_all(*a, out.grad);
        if (b->requires_grad) accum_all(*b, out.grad);
    });
}

VarPtr sub(const VarPtr& a, const VarPtr& b) {
    check_same_shape(a, b, "sub");
    Tensor y(a->value.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = a->value[i] - b->value[i];
    return make_node(std::move(y), {a, b}, [a, b](Var& out) {
        if (a->requires_grad) accum_all(*a, out.grad);
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (std::int64_t i = 0; i < out.grad.numel(); ++i) gb[i] -= out.grad[i];
        }
    });
}

VarPtr mul(const VarPtr& a, const VarPtr& b) {
    check_same_shape(a, b, "mul");
    Tensor y(a->value.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = a->value[i] * b->value[i];
    return make_node(std::move(y), {a, b}, [a, b](Var& out) {
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (std::int64_t i = 0; i < out.grad.numel(); ++i) ga[i] += out.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (std::int64_t i = 0; i < out.grad.numel(); ++i) gb[i] += out.grad[i] * a->value[i];
        }
    });
}

VarPtr scale(const VarPtr& a, double c) {
    Tensor y(a->value.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = a->value[i] * c;
    return make_node(std::move(y), {a}, [a, c](Var& out) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (std::int64_t i = 0; i < out.grad.numel(); ++i) ga[i] += out.grad[i] * c;
    });
}

VarPtr add_const(const VarPtr& a, double c) {
    Tensor y(a->value.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = a->value[i] + c;
    return make_node(std::move(y), {a}, [a](Var& out) {
        if (a->requires_grad) accum_all(*a, out.grad);
    });
}

VarPtr sigmoid(const VarPtr& a) {
    Tensor y(a->value.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) {
        const double v = a->value[i];
        y[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    return make_node(std::move(y), {a}, [a](Var& out) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (std::int64_t i = 0; i < out.grad.numel(); ++i) {
            const double s = out.value[i];
            ga[i] += out.grad[i] * s * (1.0 - s);
        }
    });
}

VarPtr relu(const VarPtr& a) {
    Tensor y(a->value.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = a->value[i] > 0.0 ? a->value[i] : 0.0;
    return make_node(std::move(y), {a}, [a](Var& out) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (std::int64_t i = 0; i < out.grad.numel(); ++i)
            if (a->value[i] > 0.0) ga[i] += out.grad[i];
    });
}

VarPtr gelu(const VarPtr& a) {
    Tensor y(a->value.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) {
        const double v = a->value[i];
        y[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    }
    return make_node(std::move(y), {a}, [a](Var& out) {
        if (!a->requires_grad) return;
        Tensor& ga = a->ensure_grad();
        for (std::int64_t i = 0; i < out.grad.numel(); ++i) {
            const double v = a->value[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            ga[i] += out.grad[i] * (cdf + v * pdf);
        }
    });
}

VarPtr mul_bcast_c(const VarPtr& x, const VarPtr& a) {
    const Tensor& xv = x->value;
    const Tensor& av = a->value;
    if (xv.ndim() != 4 || av.ndim() != 4 || av.dim(1) != 1 || av.dim(0) != xv.dim(0) || av.dim(2) != xv.dim(2) ||
        av.dim(3) != xv.dim(3))
        throw std::invalid_argument("mul_bcast_c: expected (B,C,H,W) x (B,1,H,W)");
    const int nb = xv.dim(0), nc = xv.dim(1);
    const std::int64_t hw = static_cast<std::int64_t>(xv.dim(2)) * xv.dim(3);
    Tensor y(xv.shape());
    for (int b = 0; b < nb; ++b)
        for (int c = 0; c < nc; ++c) {
            const double* xp = xv.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
            const double* ap = av.data() + static_cast<std::int64_t>(b) * hw;
            double* yp = y.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i) yp[i] = xp[i] * ap[i];
        }
    return make_node(std::move(y), {x, a}, [x, a, nb, nc, hw](Var& out) {
        if (x->requires_grad) {
            Tensor& gx = x->ensure_grad();
            for (int b = 0; b < nb; ++b)
                for (int c = 0; c < nc; ++c) {
                    double* gp = gx.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
                    const double* op = out.grad.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
                    const double* ap = a->value.data() + static_cast<std::int64_t>(b) * hw;
                    for (std::int64_t i = 0; i < hw; ++i) gp[i] += op[i] * ap[i];
                }
        }
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (int b = 0; b < nb; ++b)
                for (int c = 0; c < nc; ++c) {
                    double* gp = ga.data() + static_cast<std::int64_t>(b) * hw;
                    const double* op = out.grad.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
                    const double* xp = x->value.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
                    for (std::int64_t i = 0; i < hw; ++i) gp[i] += op[i] * xp[i];
                }
        }
    });
}

VarPtr mul_bcast_hw(const VarPtr& x, const VarPtr& s) {
    const Tensor& xv = x->value;
    const Tensor& sv = s->value;
    if (xv.ndim() != 4 || sv.ndim() != 2 || sv.dim(0) != xv.dim(0) || sv.dim(1) != xv.dim(1))
        throw std::invalid_argument("mul_bcast_hw: expected (B,C,H,W) x (B,C)");
    const int nb = xv.dim(0), nc = xv.dim(1);
    const std::int64_t hw = static_cast<std::int64_t>(xv.dim(2)) * xv.dim(3);
    Tensor y(xv.shape());
    for (int b = 0; b < nb; ++b)
        for (int c = 0; c < nc; ++c) {
            const double g = sv[static_cast<std::int64_t>(b) * nc + c];
            const double* xp = xv.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
            double* yp = y.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i) yp[i] = xp[i] * g;
        }
    return make_node(std::move(y), {x, s}, [x, s, nb, nc, hw](Var& out) {
        if (x->requires_grad) {
            Tensor& gx = x->ensure_grad();
            for (int b = 0; b < nb; ++b)
                for (int c = 0; c < nc; ++c) {
                    const double g = s->value[static_cast<std::int64_t>(b) * nc + c];
                    double* gp = gx.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
                    const double* op = out.grad.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
                    for (std::int64_t i = 0; i < hw; ++i) gp[i] += op[i] * g;
                }
        }
        if (s->requires_grad) {
            Tensor& gs = s->ensure_grad();
            for (int b = 0; b < nb; ++b)
                for (int c = 0; c < nc; ++c) {
                    const double* op = out.grad.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
                    const double* xp = x->value.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < hw; ++i) acc += op[i] * xp[i];
                    gs[static_cast<std::int64_t>(b) * nc + c] += acc;
                }
        }
    });
}

VarPtr concat_c(const std::vector<VarPtr>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_c: no inputs");
    const Tensor& first = xs[0]->value;
    if (first.ndim() != 4) throw std::invalid_argument("concat_c expects (B,C,H,W)");
    int total_c = 0;
    for (const auto& x : xs) {
        const Tensor& v = x->value;
        if (v.ndim() != 4 || v.dim(0) != first.dim(0) || v.dim(2) != first.dim(2) || v.dim(3) != first.dim(3))
            throw std::invalid_argument("concat_c: incompatible shapes");
        total_c += v.dim(1);
    }
    const int nb = first.dim(0);
    const std::int64_t hw = static_cast<std::int64_t>(first.dim(2)) * first.dim(3);
    Tensor y({nb, total_c, first.dim(2), first.dim(3)});
    for (int b = 0; b < nb; ++b) {
        int co = 0;
        for (const auto& x : xs) {
            const int c_in = x->value.dim(1);
            const double* src = x->value.data() + static_cast<std::int64_t>(b) * c_in * hw;
            double* dst = y.data() + (static_cast<std::int64_t>(b) * total_c + co) * hw;
            std::copy(src, src + static_cast<std::int64_t>(c_in) * hw, dst);
            co += c_in;
        }
    }
    std::vector<VarPtr> inputs = xs;
    return make_node(std::move(y), std::move(inputs), [xs, nb, total_c, hw](Var& out) {
        for (int b = 0; b < nb; ++b) {
            int co = 0;
            for (const auto& x : xs) {
                const int c_in = x->value.dim(1);
                if (x->requires_grad) {
                    Tensor& gx = x->ensure_grad();
                    const double* src = out.grad.data() + (static_cast<std::int64_t>(b) * total_c + co) * hw;
                    double* dst = gx.data() + static_cast<std::int64_t>(b) * c_in * hw;
                    for (std::int64_t i = 0; i < static_cast<std::int64_t>(c_in) * hw; ++i) dst[i] += src[i];
                }
                co += c_in;
            }
        }
    });
}

VarPtr slice_c(const VarPtr& x, int c0, int c1) {
    const Tensor& xv = x->value;
    if (xv.ndim() != 4 || c0 < 0 || c1 > xv.dim(1) || c0 >= c1)
        throw std::invalid_argument("slice_c: bad channel range");
    const int nb = xv.dim(0), nc = xv.dim(1), c_out = c1 - c0;
    const std::int64_t hw = static_cast<std::int64_t>(xv.dim(2)) * xv.dim(3);
    Tensor y({nb, c_out, xv.dim(2), xv.dim(3)});
    for (int b = 0; b < nb; ++b) {
        const double* src = xv.data() + (static_cast<std::int64_t>(b) * nc + c0) * hw;
        double* dst = y.data() + static_cast<std::int64_t>(b) * c_out * hw;
        std::copy(src, src + static_cast<std::int64_t>(c_out) * hw, dst);
    }
    return make_node(std::move(y), {x}, [x, nb, nc, c0, c_out, hw](Var& out) {
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (int b = 0; b < nb; ++b) {
            double* dst = gx.data() + (static_cast<std::int64_t>(b) * nc + c0) * hw;
            const double* src = out.grad.data() + static_cast<std::int64_t>(b) * c_out * hw;
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(c_out) * hw; ++i) dst[i] += src[i];
        }
    });
}

VarPtr mean_c(const VarPtr& x) {
    const Tensor& xv = x->value;
    if (xv.ndim() != 4) throw std::invalid_argument("mean_c expects (B,C,H,W)");
    const int nb = xv.dim(0), nc = xv.dim(1);
    const std::int64_t hw = static_cast<std::int64_t>(xv.dim(2)) * xv.dim(3);
    Tensor y({nb, 1, xv.dim(2), xv.dim(3)});
    const double inv = 1.0 / nc;
    for (int b = 0; b < nb; ++b)
        for (std::int64_t i = 0; i < hw; ++i) {
            double acc = 0.0;
            for (int c = 0; c < nc; ++c) acc += xv[(static_cast<std::int64_t>(b) * nc + c) * hw + i];
            y[static_cast<std::int64_t>(b) * hw + i] = acc * inv;
        }
    return make_node(std::move(y), {x}, [x, nb, nc, hw, inv](Var& out) {
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (int b = 0; b < nb; ++b)
            for (std::int64_t i = 0; i < hw; ++i) {
                const double g = out.grad[static_cast<std::int64_t>(b) * hw + i] * inv;
                for (int c = 0; c < nc; ++c) gx[(static_cast<std::int64_t>(b) * nc + c) * hw + i] += g;
            }
    });
}

VarPtr max_c(const VarPtr& x) {
    const Tensor& xv = x->value;
    if (xv.ndim() != 4) throw std::invalid_argument("max_c expects (B,C,H,W)");
    const int nb = xv.dim(0), nc = xv.dim(1);
    const std::int64_t hw = static_cast<std::int64_t>(xv.dim(2)) * xv.dim(3);
    Tensor y({nb, 1, xv.dim(2), xv.dim(3)});
    auto arg = std::make_shared<std::vector<int>>(static_cast<size_t>(nb * hw));
    for (int b = 0; b < nb; ++b)
        for (std::int64_t i = 0; i < hw; ++i) {
            int best_c = 0;
            double best = xv[(static_cast<std::int64_t>(b) * nc) * hw + i];
            for (int c = 1; c < nc; ++c) {
                const double v = xv[(static_cast<std::int64_t>(b) * nc + c) * hw + i];
                if (v > best) {
                    best = v;
                    best_c = c;
                }
            }
            y[static_cast<std::int64_t>(b) * hw + i] = best;
            (*arg)[static_cast<size_t>(b * hw + i)] = best_c;
        }
    return make_node(std::move(y), {x}, [x, arg, nb, nc, hw](Var& out) {
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (int b = 0; b < nb; ++b)
            for (std::int64_t i = 0; i < hw; ++i) {
                const int c = (*arg)[static_cast<size_t>(b * hw + i)];
                gx[(static_cast<std::int64_t>(b) * nc + c) * hw + i] += out.grad[static_cast<std::int64_t>(b) * hw + i];
            }
    });
}

VarPtr global_avgpool(const VarPtr& x) {
    const Tensor& xv = x->value;
    if (xv.ndim() != 4) throw std::invalid_argument("global_avgpool expects (B,C,H,W)");
    const int nb = xv.dim(0), nc = xv.dim(1);
    const std::int64_t hw = static_cast<std::int64_t>(xv.dim(2)) * xv.dim(3);
    const double inv = 1.0 / static_cast<double>(hw);
    Tensor y({nb, nc});
    for (int b = 0; b < nb; ++b)
        for (int c = 0; c < nc; ++c) {
            const double* xp = xv.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
            double acc = 0.0;
            for (std::int64_t i = 0; i < hw; ++i) acc += xp[i];
            y[static_cast<std::int64_t>(b) * nc + c] = acc * inv;
        }
    return make_node(std::move(y), {x}, [x, nb, nc, hw, inv](Var& out) {
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (int b = 0; b < nb; ++b)
            for (int c = 0; c < nc; ++c) {
                const double g = out.grad[static_cast<std::int64_t>(b) * nc + c] * inv;
                double* gp = gx.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
                for (std::int64_t i = 0; i < hw; ++i) gp[i] += g;
            }
    });
}

VarPtr global_maxpool(const VarPtr& x) {
    const Tensor& xv = x->value;
    if (xv.ndim() != 4) throw std::invalid_argument("global_maxpool expects (B,C,H,W)");
    const int nb = xv.dim(0), nc = xv.dim(1);
    const std::int64_t hw = static_cast<std::int64_t>(xv.dim(2)) * xv.dim(3);
    Tensor y({nb, nc});
    auto arg = std::make_shared<std::vector<std::int64_t>>(static_cast<size_t>(nb) * nc);
    for (int b = 0; b < nb; ++b)
        for (int c = 0; c < nc; ++c) {
            const double* xp = xv.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
            std::int64_t best_i = 0;
            double best = xp[0];
            for (std::int64_t i = 1; i < hw; ++i)
                if (xp[i] > best) {
                    best = xp[i];
                    best_i = i;
                }
            y[static_cast<std::int64_t>(b) * nc + c] = best;
            (*arg)[static_cast<size_t>(b) * nc + c] = best_i;
        }
    return make_node(std::move(y), {x}, [x, arg, nb, nc, hw](Var& out) {
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (int b = 0; b < nb; ++b)
            for (int c = 0; c < nc; ++c) {
                const std::int64_t i = (*arg)[static_cast<size_t>(b) * nc + c];
                gx[(static_cast<std::int64_t>(b) * nc + c) * hw + i] += out.grad[static_cast<std::int64_t>(b) * nc + c];
            }
    });
}

VarPtr reshape(const VarPtr& x, std::vector<int> shape) {
    if (shape_numel(shape) != x->value.numel()) throw std::invalid_argument("reshape: element count mismatch");
    Tensor y(shape);
    std::copy(x->value.data(), x->value.data() + x->value.numel(), y.data());
    return make_node(std::move(y), {x}, [x](Var& out) {
        if (x->requires_grad) accum_all(*x, out.grad);
    });
}

VarPtr to_tokens(const VarPtr& x) {
    const Tensor& xv = x->value;
    if (xv.ndim() != 4) throw std::invalid_argument("to_tokens expects (B,C,H,W)");
    const int nb = xv.dim(0), nc = xv.dim(1);
    const std::int64_t hw = static_cast<std::int64_t>(xv.dim(2)) * xv.dim(3);
    Tensor y({nb, static_cast<int>(hw), nc});
    for (int b = 0; b < nb; ++b)
        for (int c = 0; c < nc; ++c) {
            const double* xp = xv.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i) y[(static_cast<std::int64_t>(b) * hw + i) * nc + c] = xp[i];
        }
    return make_node(std::move(y), {x}, [x, nb, nc, hw](Var& out) {
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (int b = 0; b < nb; ++b)
            for (int c = 0; c < nc; ++c) {
                double* gp = gx.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
                for (std::int64_t i = 0; i < hw; ++i) gp[i] += out.grad[(static_cast<std::int64_t>(b) * hw + i) * nc + c];
            }
    });
}

VarPtr from_tokens(const VarPtr& x, int h, int w) {
    const Tensor& xv = x->value;
    if (xv.ndim() != 3 || xv.dim(1) != h * w) throw std::invalid_argument("from_tokens: token count mismatch");
    const int nb = xv.dim(0), nc = xv.dim(2);
    const std::int64_t hw = static_cast<std::int64_t>(h) * w;
    Tensor y({nb, nc, h, w});
    for (int b = 0; b < nb; ++b)
        for (int c = 0; c < nc; ++c) {
            double* yp = y.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i) yp[i] = xv[(static_cast<std::int64_t>(b) * hw + i) * nc + c];
        }
    return make_node(std::move(y), {x}, [x, nb, nc, hw](Var& out) {
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (int b = 0; b < nb; ++b)
            for (int c = 0; c < nc; ++c) {
                const double* op = out.grad.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
                for (std::int64_t i = 0; i < hw; ++i) gx[(static_cast<std::int64_t>(b) * hw + i) * nc + c] += op[i];
            }
    });
}

VarPtr split_heads(const VarPtr& x, int heads) {
    const Tensor& xv = x->value;
    if (xv.ndim() != 3 || xv.dim(2) % heads != 0) throw std::invalid_argument("split_heads: channels not divisible");
    const int nb = xv.dim(0), nt = xv.dim(1), nc = xv.dim(2), dh = nc / heads;
    Tensor y({nb, heads, nt, dh});
    for (int b = 0; b < nb; ++b)
        for (int t = 0; t < nt; ++t)
            for (int hh = 0; hh < heads; ++hh)
                for (int d = 0; d < dh; ++d)
                    y.at4(b, hh, t, d) = xv[(static_cast<std::int64_t>(b) * nt + t) * nc + hh * dh + d];
    return make_node(std::move(y), {x}, [x, nb, nt, nc, dh, heads](Var& out) {
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (int b = 0; b < nb; ++b)
            for (int t = 0; t < nt; ++t)
                for (int hh = 0; hh < heads; ++hh)
                    for (int d = 0; d < dh; ++d)
                        gx[(static_cast<std::int64_t>(b) * nt + t) * nc + hh * dh + d] += out.grad.at4(b, hh, t, d);
    });
}

VarPtr merge_heads(const VarPtr& x) {
    const Tensor& xv = x->value;
    if (xv.ndim() != 4) throw std::invalid_argument("merge_heads expects (B,h,T,d)");
    const int nb = xv.dim(0), heads = xv.dim(1), nt = xv.dim(2), dh = xv.dim(3), nc = heads * dh;
    Tensor y({nb, nt, nc});
    for (int b = 0; b < nb; ++b)
        for (int hh = 0; hh < heads; ++hh)
            for (int t = 0; t < nt; ++t)
                for (int d = 0; d < dh; ++d)
                    y[(static_cast<std::int64_t>(b) * nt + t) * nc + hh * dh + d] = xv.at4(b, hh, t, d);
    return make_node(std::move(y), {x}, [x, nb, heads, nt, dh, nc](Var& out) {
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (int b = 0; b < nb; ++b)
            for (int hh = 0; hh < heads; ++hh)
                for (int t = 0; t < nt; ++t)
                    for (int d = 0; d < dh; ++d)
                        gx.at4(b, hh, t, d) += out.grad[(static_cast<std::int64_t>(b) * nt + t) * nc + hh * dh + d];
    });
}

VarPtr linear(const VarPtr& x, const VarPtr& w, const VarPtr& b) {
    const Tensor& xv = x->value;
    const Tensor& wv = w->value;
    if (xv.ndim() < 2 || wv.ndim() != 2) throw std::invalid_argument("linear: bad ranks");
    const int ci = xv.dim(xv.ndim() - 1);
    if (wv.dim(1) != ci) throw std::invalid_argument("linear: input feature mismatch");
    const int co = wv.dim(0);
    const std::int64_t rows = xv.numel() / ci;
    std::vector<int> yshape = xv.shape();
    yshape.back() = co;
    Tensor y(yshape);
    {
        CMapMat xm(xv.data(), rows, ci);
        CMapMat wm(wv.data(), co, ci);
        MapMat ym(y.data(), rows, co);
        ym.noalias() = xm * wm.transpose();
        if (b) {
            const Tensor& bv = b->value;
            if (bv.numel() != co) throw std::invalid_argument("linear: bias size mismatch");
            for (std::int64_t r = 0; r < rows; ++r)
                for (int c = 0; c < co; ++c) y[r * co + c] += bv[c];
        }
    }
    if (auto* fc = flop_counter()) fc->linear += 2.0 * ci * co * static_cast<double>(rows);
    std::vector<VarPtr> inputs = b ? std::vector<VarPtr>{x, w, b} : std::vector<VarPtr>{x, w};
    return make_node(std::move(y), std::move(inputs), [x, w, b, rows, ci, co](Var& out) {
        CMapMat gy(out.grad.data(), rows, co);
        if (x->requires_grad) {
            Tensor& gx = x->ensure_grad();
            MapMat gxm(gx.data(), rows, ci);
            CMapMat wm(w->value.data(), co, ci);
            gxm.noalias() += gy * wm;
        }
        if (w->requires_grad) {
            Tensor& gw = w->ensure_grad();
            MapMat gwm(gw.data(), co, ci);
            CMapMat xm(x->value.data(), rows, ci);
            gwm.noalias() += gy.transpose() * xm;
        }
        if (b && b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (std::int64_t r = 0; r < rows; ++r)
                for (int c = 0; c < co; ++c) gb[c] += out.grad[r * co + c];
        }
    });
}

VarPtr matmul_nt(const VarPtr& a, const VarPtr& b) {
    const Tensor& av = a->value;
    const Tensor& bv = b->value;
    if (av.ndim() != 4 || bv.ndim() != 4 || av.dim(0) != bv.dim(0) || av.dim(1) != bv.dim(1) ||
        av.dim(3) != bv.dim(3))
        throw std::invalid_argument("matmul_nt: incompatible shapes");
    const int nb = av.dim(0), nh = av.dim(1), t1 = av.dim(2), t2 = bv.dim(2), dd = av.dim(3);
    Tensor y({nb, nh, t1, t2});
    for (int i = 0; i < nb * nh; ++i) {
        CMapMat am(av.data() + static_cast<std::int64_t>(i) * t1 * dd, t1, dd);
        CMapMat bm(bv.data() + static_cast<std::int64_t>(i) * t2 * dd, t2, dd);
        MapMat ym(y.data() + static_cast<std::int64_t>(i) * t1 * t2, t1, t2);
        ym.noalias() = am * bm.transpose();
    }
    if (auto* fc = flop_counter()) fc->attention += 2.0 * nb * nh * t1 * t2 * static_cast<double>(dd);
    return make_node(std::move(y), {a, b}, [a, b, nb, nh, t1, t2, dd](Var& out) {
        for (int i = 0; i < nb * nh; ++i) {
            CMapMat gy(out.grad.data() + static_cast<std::int64_t>(i) * t1 * t2, t1, t2);
            if (a->requires_grad) {
                Tensor& ga = a->ensure_grad();
                MapMat gam(ga.data() + static_cast<std::int64_t>(i) * t1 * dd, t1, dd);
                CMapMat bm(b->value.data() + static_cast<std::int64_t>(i) * t2 * dd, t2, dd);
                gam.noalias() += gy * bm;
            }
            if (b->requires_grad) {
                Tensor& gb = b->ensure_grad();
                MapMat gbm(gb.data() + static_cast<std::int64_t>(i) * t2 * dd, t2, dd);
                CMapMat am(a->value.data() + static_cast<std::int64_t>(i) * t1 * dd, t1, dd);
                gbm.noalias() += gy.transpose() * am;
            }
        }
    });
}

VarPtr matmul_nn(const VarPtr& a, const VarPtr& b) {
    const Tensor& av = a->value;
    const Tensor& bv = b->value;
    if (av.ndim() != 4 || bv.ndim() != 4 || av.dim(0) != bv.dim(0) || av.dim(1) != bv.dim(1) ||
        av.dim(3) != bv.dim(2))
        throw std::invalid_argument("matmul_nn: incompatible shapes");
    const int nb = av.dim(0), nh = av.dim(1), t1 = av.dim(2), t2 = av.dim(3), dd = bv.dim(3);
    Tensor y({nb, nh, t1, dd});
    for (int i = 0; i < nb * nh; ++i) {
        CMapMat am(av.data() + static_cast<std::int64_t>(i) * t1 * t2, t1, t2);
        CMapMat bm(bv.data() + static_cast<std::int64_t>(i) * t2 * dd, t2, dd);
        MapMat ym(y.data() + static_cast<std::int64_t>(i) * t1 * dd, t1, dd);
        ym.noalias() = am * bm;
    }
    if (auto* fc = flop_counter()) fc->attention += 2.0 * nb * nh * t1 * t2 * static_cast<double>(dd);
    return make_node(std::move(y), {a, b}, [a, b, nb, nh, t1, t2, dd](Var& out) {
        for (int i = 0; i < nb * nh; ++i) {
            CMapMat gy(out.grad.data() + static_cast<std::int64_t>(i) * t1 * dd, t1, dd);
            if (a->requires_grad) {
                Tensor& ga = a->ensure_grad();
                MapMat gam(ga.data() + static_cast<std::int64_t>(i) * t1 * t2, t1, t2);
                CMapMat bm(b->value.data() + static_cast<std::int64_t>(i) * t2 * dd, t2, dd);
                gam.noalias() += gy * bm.transpose();
            }
            if (b->requires_grad) {
                Tensor& gb = b->ensure_grad();
                MapMat gbm(gb.data() + static_cast<std::int64_t>(i) * t2 * dd, t2, dd);
                CMapMat am(a->value.data() + static_cast<std::int64_t>(i) * t1 * t2, t1, t2);
                gbm.noalias() += am.transpose() * gy;
            }
        }
    });
}

VarPtr softmax_last(const VarPtr& x) {
    const Tensor& xv = x->value;
    if (xv.ndim() < 1) throw std::invalid_argument("softmax_last: rank 0");
    const int n = xv.dim(xv.ndim() - 1);
    const std::int64_t rows = xv.numel() / n;
    Tensor y(xv.shape());
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* xp = xv.data() + r * n;
        double* yp = y.data() + r * n;
        double m = xp[0];
        for (int i = 1; i < n; ++i) m = std::max(m, xp[i]);
        double s = 0.0;
        for (int i = 0; i < n; ++i) {
            yp[i] = std::exp(xp[i] - m);
            s += yp[i];
        }
        const double inv = 1.0 / s;
        for (int i = 0; i < n; ++i) yp[i] *= inv;
    }
    return make_node(std::move(y), {x}, [x, rows, n](Var& out) {
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* yp = out.value.data() + r * n;
            const double* gp = out.grad.data() + r * n;
            double dot = 0.0;
            for (int i = 0; i < n; ++i) dot += yp[i] * gp[i];
            double* gxp = gx.data() + r * n;
            for (int i = 0; i < n; ++i) gxp[i] += yp[i] * (gp[i] - dot);
        }
    });
}

VarPtr layernorm_chw(const VarPtr& x, const VarPtr& gamma, const VarPtr& beta, double eps) {
    const Tensor& xv = x->value;
    if (xv.ndim() != 4) throw std::invalid_argument("layernorm_chw expects (B,C,H,W)");
    const int nb = xv.dim(0), nc = xv.dim(1);
    const std::int64_t hw = static_cast<std::int64_t>(xv.dim(2)) * xv.dim(3);
    if (gamma->value.numel() != nc || beta->value.numel() != nc)
        throw std::invalid_argument("layernorm_chw: affine size mismatch");
    Tensor y(xv.shape());
    auto stats = std::make_shared<Tensor>(std::vector<int>{nb, 2, static_cast<int>(hw)});  // mean, invstd
    for (int b = 0; b < nb; ++b)
        for (std::int64_t i = 0; i < hw; ++i) {
            double mean = 0.0;
            for (int c = 0; c < nc; ++c) mean += xv[(static_cast<std::int64_t>(b) * nc + c) * hw + i];
            mean /= nc;
            double var = 0.0;
            for (int c = 0; c < nc; ++c) {
                const double d = xv[(static_cast<std::int64_t>(b) * nc + c) * hw + i] - mean;
                var += d * d;
            }
            var /= nc;
            const double inv = 1.0 / std::sqrt(var + eps);
            (*stats)[(static_cast<std::int64_t>(b) * 2 + 0) * hw + i] = mean;
            (*stats)[(static_cast<std::int64_t>(b) * 2 + 1) * hw + i] = inv;
            for (int c = 0; c < nc; ++c) {
                const double xh = (xv[(static_cast<std::int64_t>(b) * nc + c) * hw + i] - mean) * inv;
                y[(static_cast<std::int64_t>(b) * nc + c) * hw + i] = gamma->value[c] * xh + beta->value[c];
            }
        }
    return make_node(std::move(y), {x, gamma, beta}, [x, gamma, beta, stats, nb, nc, hw](Var& out) {
        Tensor* gx = x->requires_grad ? &x->ensure_grad() : nullptr;
        Tensor* gg = gamma->requires_grad ? &gamma->ensure_grad() : nullptr;
        Tensor* gb = beta->requires_grad ? &beta->ensure_grad() : nullptr;
        for (int b = 0; b < nb; ++b)
            for (std::int64_t i = 0; i < hw; ++i) {
                const double mean = (*stats)[(static_cast<std::int64_t>(b) * 2 + 0) * hw + i];
                const double inv = (*stats)[(static_cast<std::int64_t>(b) * 2 + 1) * hw + i];
                double s1 = 0.0, s2 = 0.0;
                for (int c = 0; c < nc; ++c) {
                    const std::int64_t idx = (static_cast<std::int64_t>(b) * nc + c) * hw + i;
                    const double xh = (x->value[idx] - mean) * inv;
                    const double g = out.grad[idx];
                    s1 += gamma->value[c] * g;
                    s2 += gamma->value[c] * g * xh;
                    if (gg) (*gg)[c] += g * xh;
                    if (gb) (*gb)[c] += g;
                }
                if (gx) {
                    s1 /= nc;
                    s2 /= nc;
                    for (int c = 0; c < nc; ++c) {
                        const std::int64_t idx = (static_cast<std::int64_t>(b) * nc + c) * hw + i;
                        const double xh = (x->value[idx] - mean) * inv;
                        (*gx)[idx] += inv * (gamma->value[c] * out.grad[idx] - s1 - xh * s2);
                    }
                }
            }
    });
}

VarPtr batchnorm2d(const VarPtr& x, const VarPtr& gamma, const VarPtr& beta, Tensor* running_mean,
                   Tensor* running_var, bool training, double momentum, double eps) {
    const Tensor& xv = x->value;
    if (xv.ndim() != 4) throw std::invalid_argument("batchnorm2d expects (B,C,H,W)");
    const int nb = xv.dim(0), nc = xv.dim(1);
    const std::int64_t hw = static_cast<std::int64_t>(xv.dim(2)) * xv.dim(3);
    const std::int64_t n = static_cast<std::int64_t>(nb) * hw;
    auto mu = std::make_shared<Tensor>(std::vector<int>{nc});
    auto inv = std::make_shared<Tensor>(std::vector<int>{nc});
    if (training) {
        for (int c = 0; c < nc; ++c) {
            double mean = 0.0;
            for (int b = 0; b < nb; ++b) {
                const double* xp = xv.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
                for (std::int64_t i = 0; i < hw; ++i) mean += xp[i];
            }
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (int b = 0; b < nb; ++b) {
                const double* xp = xv.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
                for (std::int64_t i = 0; i < hw; ++i) {
                    const double d = xp[i] - mean;
                    var += d * d;
                }
            }
            var /= static_cast<double>(n);
            (*mu)[c] = mean;
            (*inv)[c] = 1.0 / std::sqrt(var + eps);
            if (running_mean) (*running_mean)[c] = (1.0 - momentum) * (*running_mean)[c] + momentum * mean;
            if (running_var) (*running_var)[c] = (1.0 - momentum) * (*running_var)[c] + momentum * var;
        }
    } else {
        if (!running_mean || !running_var) throw std::invalid_argument("batchnorm2d: eval mode needs running stats");
        for (int c = 0; c < nc; ++c) {
            (*mu)[c] = (*running_mean)[c];
            (*inv)[c] = 1.0 / std::sqrt((*running_var)[c] + eps);
        }
    }
    Tensor y(xv.shape());
    for (int b = 0; b < nb; ++b)
        for (int c = 0; c < nc; ++c) {
            const double m = (*mu)[c], iv = (*inv)[c], g = gamma->value[c], bt = beta->value[c];
            const double* xp = xv.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
            double* yp = y.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
            for (std::int64_t i = 0; i < hw; ++i) yp[i] = g * ((xp[i] - m) * iv) + bt;
        }
    return make_node(std::move(y), {x, gamma, beta}, [x, gamma, beta, mu, inv, nb, nc, hw, n, training](Var& out) {
        Tensor* gx = x->requires_grad ? &x->ensure_grad() : nullptr;
        Tensor* gg = gamma->requires_grad ? &gamma->ensure_grad() : nullptr;
        Tensor* gb = beta->requires_grad ? &beta->ensure_grad() : nullptr;
        for (int c = 0; c < nc; ++c) {
            const double m = (*mu)[c], iv = (*inv)[c], gam = gamma->value[c];
            double sg = 0.0, sgx = 0.0;
            for (int b = 0; b < nb; ++b) {
                const double* xp = x->value.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
                const double* op = out.grad.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
                for (std::int64_t i = 0; i < hw; ++i) {
                    sg += op[i];
                    sgx += op[i] * (xp[i] - m) * iv;
                }
            }
            if (gg) (*gg)[c] += sgx;
            if (gb) (*gb)[c] += sg;
            if (gx) {
                if (training) {
                    const double mg = sg / static_cast<double>(n);
                    const double mgx = sgx / static_cast<double>(n);
                    for (int b = 0; b < nb; ++b) {
                        const double* xp = x->value.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
                        const double* op = out.grad.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
                        double* gp = gx->data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
                        for (std::int64_t i = 0; i < hw; ++i) {
                            const double xh = (xp[i] - m) * iv;
                            gp[i] += gam * iv * (op[i] - mg - xh * mgx);
                        }
                    }
                } else {
                    for (int b = 0; b < nb; ++b) {
                        const double* op = out.grad.data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
                        double* gp = gx->data() + (static_cast<std::int64_t>(b) * nc + c) * hw;
                        for (std::int64_t i = 0; i < hw; ++i) gp[i] += op[i] * gam * iv;
                    }
                }
            }
        }
    });
}

VarPtr upsample_bilinear(const VarPtr& x, int h_out, int w_out) {
    const Tensor& xv = x->value;
    if (xv.ndim() != 4) throw std::invalid_argument("upsample_bilinear expects (B,C,H,W)");
    const int nb = xv.dim(0), nc = xv.dim(1), hi = xv.dim(2), wi = xv.dim(3);
    auto make_axis = [](int in, int out) {
        std::vector<int> i0(static_cast<size_t>(out)), i1(static_cast<size_t>(out));
        std::vector<double> t(static_cast<size_t>(out));
        const double s = static_cast<double>(in) / out;
        for (int o = 0; o < out; ++o) {
            double src = (o + 0.5) * s - 0.5;
            if (src < 0.0) src = 0.0;
            if (src > in - 1) src = in - 1;
            const int lo = static_cast<int>(std::floor(src));
            i0[static_cast<size_t>(o)] = lo;
            i1[static_cast<size_t>(o)] = std::min(lo + 1, in - 1);
            t[static_cast<size_t>(o)] = src - lo;
        }
        return std::make_tuple(i0, i1, t);
    };
    auto [y0, y1, ty] = make_axis(hi, h_out);
    auto [x0, x1, tx] = make_axis(wi, w_out);
    Tensor y({nb, nc, h_out, w_out});
    for (int b = 0; b < nb; ++b)
        for (int c = 0; c < nc; ++c) {
            const double* xp = xv.data() + (static_cast<std::int64_t>(b) * nc + c) * hi * wi;
            double* yp = y.data() + (static_cast<std::int64_t>(b) * nc + c) * h_out * w_out;
            for (int oy = 0; oy < h_out; ++oy)
                for (int ox = 0; ox < w_out; ++ox) {
                    const double v00 = xp[static_cast<std::int64_t>(y0[oy]) * wi + x0[ox]];
                    const double v01 = xp[static_cast<std::int64_t>(y0[oy]) * wi + x1[ox]];
                    const double v10 = xp[static_cast<std::int64_t>(y1[oy]) * wi + x0[ox]];
                    const double v11 = xp[static_cast<std::int64_t>(y1[oy]) * wi + x1[ox]];
                    const double a = ty[oy], bb = tx[ox];
                    yp[static_cast<std::int64_t>(oy) * w_out + ox] =
                        (1 - a) * ((1 - bb) * v00 + bb * v01) + a * ((1 - bb) * v10 + bb * v11);
                }
        }
    auto cy0 = std::make_shared<std::vector<int>>(y0);
    auto cy1 = std::make_shared<std::vector<int>>(y1);
    auto cty = std::make_shared<std::vector<double>>(ty);
    auto cx0 = std::make_shared<std::vector<int>>(x0);
    auto cx1 = std::make_shared<std::vector<int>>(x1);
    auto ctx = std::make_shared<std::vector<double>>(tx);
    return make_node(std::move(y), {x}, [x, nb, nc, hi, wi, h_out, w_out, cy0, cy1, cty, cx0, cx1, ctx](Var& out) {
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (int b = 0; b < nb; ++b)
            for (int c = 0; c < nc; ++c) {
                double* gp = gx.data() + (static_cast<std::int64_t>(b) * nc + c) * hi * wi;
                const double* op = out.grad.data() + (static_cast<std::int64_t>(b) * nc + c) * h_out * w_out;
                for (int oy = 0; oy < h_out; ++oy)
                    for (int ox = 0; ox < w_out; ++ox) {
                        const double g = op[static_cast<std::int64_t>(oy) * w_out + ox];
                        const double a = (*cty)[oy], bb = (*ctx)[ox];
                        gp[static_cast<std::int64_t>((*cy0)[oy]) * wi + (*cx0)[ox]] += g * (1 - a) * (1 - bb);
                        gp[static_cast<std::int64_t>((*cy0)[oy]) * wi + (*cx1)[ox]] += g * (1 - a) * bb;
                        gp[static_cast<std::int64_t>((*cy1)[oy]) * wi + (*cx0)[ox]] += g * a * (1 - bb);
                        gp[static_cast<std::int64_t>((*cy1)[oy]) * wi + (*cx1)[ox]] += g * a * bb;
                    }
            }
    });
}

VarPtr avgpool2d(const VarPtr& x, int k) {
    const Tensor& xv = x->value;
    if (xv.ndim() != 4) throw std::invalid_argument("avgpool2d expects (B,C,H,W)");
    const int nb = xv.dim(0), nc = xv.dim(1), hi = xv.dim(2), wi = xv.dim(3);
    if (k <= 0 || hi % k != 0 || wi % k != 0)
        throw std::invalid_argument("avgpool2d: spatial size must be divisible by the window");
    if (k == 1) return x;
    const int ho = hi / k, wo = wi / k;
    const double inv = 1.0 / (static_cast<double>(k) * k);
    Tensor y({nb, nc, ho, wo});
    for (int b = 0; b < nb; ++b)
        for (int c = 0; c < nc; ++c) {
            const double* xp = xv.data() + (static_cast<std::int64_t>(b) * nc + c) * hi * wi;
            double* yp = y.data() + (static_cast<std::int64_t>(b) * nc + c) * ho * wo;
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    double s = 0.0;
                    for (int dy = 0; dy < k; ++dy)
                        for (int dx = 0; dx < k; ++dx)
                            s += xp[static_cast<std::int64_t>(oy * k + dy) * wi + ox * k + dx];
                    yp[static_cast<std::int64_t>(oy) * wo + ox] = s * inv;
                }
        }
    return make_node(std::move(y), {x}, [x, nb, nc, hi, wi, ho, wo, k, inv](Var& out) {
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        for (int b = 0; b < nb; ++b)
            for (int c = 0; c < nc; ++c) {
                double* gp = gx.data() + (static_cast<std::int64_t>(b) * nc + c) * hi * wi;
                const double* op = out.grad.data() + (static_cast<std::int64_t>(b) * nc + c) * ho * wo;
                for (int oy = 0; oy < ho; ++oy)
                    for (int ox = 0; ox < wo; ++ox) {
                        const double g = op[static_cast<std::int64_t>(oy) * wo + ox] * inv;
                        for (int dy = 0; dy < k; ++dy)
                            for (int dx = 0; dx < k; ++dx)
                                gp[static_cast<std::int64_t>(oy * k + dy) * wi + ox * k + dx] += g;
                    }
            }
    });
}

VarPtr sum_all(const VarPtr& x) {
    Tensor y = Tensor::scalar(x->value.sum());
    return make_node(std::move(y), {x}, [x](Var& out) {
        if (!x->requires_grad) return;
        Tensor& gx = x->ensure_grad();
        const double g = out.grad[0];
        for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    });
}

VarPtr div_ss(const VarPtr& a, const VarPtr& b) {
    if (a->value.numel() != 1 || b->value.numel() != 1) throw std::invalid_argument("div_ss expects scalars");
    Tensor y = Tensor::scalar(a->value[0] / b->value[0]);
    return make_node(std::move(y), {a, b}, [a, b](Var& out) {
        const double g = out.grad[0];
        const double av = a->value[0], bv = b->value[0];
        if (a->requires_grad) a->ensure_grad()[0] += g / bv;
        if (b->requires_grad) b->ensure_grad()[0] -= g * av / (bv * bv);
    });
}

VarPtr bce_logits(const VarPtr& p, const VarPtr& t) {
    check_same_shape(p, t, "bce_logits");
    Tensor y(p->value.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) {
        const double v = p->value[i], tt = t->value[i];
        y[i] = std::max(v, 0.0) - v * tt + std::log1p(std::exp(-std::fabs(v)));
    }
    return make_node(std::move(y), {p, t}, [p, t](Var& out) {
        if (!p->requires_grad) return;
        Tensor& gp = p->ensure_grad();
        for (std::int64_t i = 0; i < out.grad.numel(); ++i) {
            const double v = p->value[i];
            const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
            gp[i] += out.grad[i] * (s - t->value[i]);
        }
    });
}

namespace {

void count_fft_flops(int nb, int nc, int h, int w) {
    if (auto* fc = flop_counter()) {
        const double lw = w > 1 ? std::log2(static_cast<double>(w)) : 0.0;
        const double lh = h > 1 ? std::log2(static_cast<double>(h)) : 0.0;
        fc->fft += static_cast<double>(nb) * nc * (5.0 * h * w * lw + 5.0 * w * h * lh);
    }
}

}  // namespace

VarPtr rfft2(const VarPtr& x) {
    const int w_full = x->value.dim(3);
    Tensor y = fftops::rfft2(x->value);
    count_fft_flops(x->value.dim(0), x->value.dim(1), x->value.dim(2), w_full);
    return make_node(std::move(y), {x}, [x, w_full](Var& out) {
        if (!x->requires_grad) return;
        accum_all(*x, fftops::rfft2_adjoint(out.grad, w_full));
    });
}

VarPtr irfft2(const VarPtr& s, int w_full) {
    Tensor y = fftops::irfft2(s->value, w_full);
    count_fft_flops(s->value.dim(0), s->value.dim(1) / 2, s->value.dim(2), w_full);
    return make_node(std::move(y), {s}, [s](Var& out) {
        if (!s->requires_grad) return;
        accum_all(*s, fftops::irfft2_adjoint(out.grad));
    });
}

namespace {

// Averages v with its negated-frequency partner inside one column.
void balance_column(const Tensor& src, Tensor& dst, int nb, int nc, int h, int wf, int u) {
    for (int b = 0; b < nb; ++b)
        for (int c = 0; c < nc; ++c)
            for (int v = 0; v < h; ++v) {
                const int mv = (h - v) % h;
                dst.at4(b, c, v, u) = 0.5 * (src.at4(b, c, v, u) + src.at4(b, c, mv, u));
            }
}

}  // namespace

VarPtr hermitian_balance(const VarPtr& lam, int w_full) {
    const Tensor& lv = lam->value;
    if (lv.ndim() != 4 || lv.dim(3) != fftops::half_width(w_full))
        throw std::invalid_argument("hermitian_balance: width mismatch");
    const int nb = lv.dim(0), nc = lv.dim(1), h = lv.dim(2), wf = lv.dim(3);
    Tensor y = lv;
    balance_column(lv, y, nb, nc, h, wf, 0);
    const bool even = (w_full % 2 == 0) && wf >= 2;
    if (even) balance_column(lv, y, nb, nc, h, wf, wf - 1);
    return make_node(std::move(y), {lam}, [lam, nb, nc, h, wf, even](Var& out) {
        if (!lam->requires_grad) return;
        Tensor g = out.grad;
        balance_column(out.grad, g, nb, nc, h, wf, 0);
        if (even) balance_column(out.grad, g, nb, nc, h, wf, wf - 1);
        accum_all(*lam, g);
    });
}

}  // namespace glformer::ag
