// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>

#include "glformer/ops.hpp"

namespace glformer::loss {

// Border-emphasis pixel weights: 1 + 5*|boxmean(gt) - gt| with a 31x31
// window averaged over its in-bounds portion, so edge pixels are weighted
// correctly rather than diluted by implicit zero padding.
Tensor structure_weights(const Tensor& gt);

struct LevelLoss {
    double bce = 0.0;
    double iou = 0.0;
};

struct TotalLoss {
    ag::VarPtr value;                 // scalar root for backward()
    std::array<LevelLoss, 5> levels;  // forward values per supervision level
};

// Weighted binary cross-entropy from logits: sum(w * bce) / sum(w),
// computed in the numerically stable max(p,0) - p*t + log1p(exp(-|p|))
// form. gt and w enter as data (no gradients).
ag::VarPtr weighted_bce(const ag::VarPtr& logits, const Tensor& gt, const Tensor& w);

// Weighted soft IoU complement: 1 - (sum(w*s*g) + 1)/(sum(w*(s+g-s*g)) + 1)
// with s = sigmoid(logits); lies in [0, 1).
ag::VarPtr weighted_iou(const ag::VarPtr& logits, const Tensor& gt, const Tensor& w);

// Deep supervision: sum over the five logit maps of 2^-(i) * (bce + iou),
// finest level first (weights 1, 1/2, 1/4, 1/8, 1/16).
TotalLoss total_loss(const std::array<ag::VarPtr, 5>& logits, const Tensor& gt);

}  // namespace glformer::loss
