// SPDX-License-Identifier: Apache-2.0
#include "glformer/loss.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace glformer::loss {

using ag::VarPtr;

Tensor structure_weights(const Tensor& gt) {
    if (gt.ndim() != 4) throw std::invalid_argument("structure_weights expects (B,1,H,W)");
    const int nb = gt.dim(0), nc = gt.dim(1), h = gt.dim(2), w = gt.dim(3);
    const int r = 15;  // 31x31 window
    Tensor out(gt.shape());
    std::vector<double> integral(static_cast<size_t>((h + 1) * (w + 1)));
    for (int b = 0; b < nb; ++b)
        for (int c = 0; c < nc; ++c) {
            const double* g = gt.data() + (static_cast<std::int64_t>(b) * nc + c) * h * w;
            double* o = out.data() + (static_cast<std::int64_t>(b) * nc + c) * h * w;
            for (int x = 0; x <= w; ++x) integral[static_cast<size_t>(x)] = 0.0;
            for (int y = 1; y <= h; ++y) {
                double row = 0.0;
                integral[static_cast<size_t>(y * (w + 1))] = 0.0;
                for (int x = 1; x <= w; ++x) {
                    row += g[static_cast<std::int64_t>(y - 1) * w + (x - 1)];
                    integral[static_cast<size_t>(y * (w + 1) + x)] =
                        integral[static_cast<size_t>((y - 1) * (w + 1) + x)] + row;
                }
            }
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const int y0 = std::max(0, y - r), y1 = std::min(h - 1, y + r);
                    const int x0 = std::max(0, x - r), x1 = std::min(w - 1, x + r);
                    const double s = integral[static_cast<size_t>((y1 + 1) * (w + 1) + (x1 + 1))] -
                                     integral[static_cast<size_t>(y0 * (w + 1) + (x1 + 1))] -
                                     integral[static_cast<size_t>((y1 + 1) * (w + 1) + x0)] +
                                     integral[static_cast<size_t>(y0 * (w + 1) + x0)];
                    const double area = static_cast<double>(y1 - y0 + 1) * (x1 - x0 + 1);
                    const double m = s / area;
                    o[static_cast<std::int64_t>(y) * w + x] =
                        1.0 + 5.0 * std::fabs(m - g[static_cast<std::int64_t>(y) * w + x]);
                }
        }
    return out;
}

VarPtr weighted_bce(const VarPtr& logits, const Tensor& gt, const Tensor& w) {
    const VarPtr gt_c = ag::constant(gt);
    const VarPtr w_c = ag::constant(w);
    const VarPtr bce = ag::bce_logits(logits, gt_c);
    const VarPtr num = ag::sum_all(ag::mul(bce, w_c));
    return ag::scale(num, 1.0 / w.sum());
}

VarPtr weighted_iou(const VarPtr& logits, const Tensor& gt, const Tensor& w) {
    const VarPtr gt_c = ag::constant(gt);
    const VarPtr w_c = ag::constant(w);
    const VarPtr s = ag::sigmoid(logits);
    const VarPtr sg = ag::mul(s, gt_c);
    const VarPtr inter = ag::sum_all(ag::mul(w_c, sg));
    const VarPtr uni = ag::sum_all(ag::mul(w_c, ag::sub(ag::add(s, gt_c), sg)));
    const VarPtr ratio = ag::div_ss(ag::add_const(inter, 1.0), ag::add_const(uni, 1.0));
    return ag::add_const(ag::scale(ratio, -1.0), 1.0);
}

TotalLoss total_loss(const std::array<VarPtr, 5>& logits, const Tensor& gt) {
    const Tensor w = structure_weights(gt);
    TotalLoss out;
    VarPtr total;
    double level_weight = 1.0;
    for (size_t i = 0; i < 5; ++i) {
        const VarPtr bce = weighted_bce(logits[i], gt, w);
        const VarPtr iou = weighted_iou(logits[i], gt, w);
        out.levels[i].bce = bce->value[0];
        out.levels[i].iou = iou->value[0];
        const VarPtr lvl = ag::scale(ag::add(bce, iou), level_weight);
        total = total ? ag::add(total, lvl) : lvl;
        level_weight *= 0.5;
    }
    out.value = total;
    return out;
}

}  // namespace glformer::loss
