// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "glformer/tensor.hpp"

namespace glformer::metrics {

// All functions take a prediction in [0,1] and a binary ground truth as
// (H,W) tensors of equal shape. Degenerate cases follow the published
// reference implementations where those define a branch, and are pinned
// explicitly here where they do not:
//  - empty ground truth: max_f and weighted_f return 0; s_measure and
//    e_measure use the published all-background branches.
//  - nearest-foreground ties in weighted_f resolve to the smallest
//    (row, col) in row-major order.
//  - empty centroid quadrants in s_measure score 0 and carry weight 0.

double mae(const Tensor& pred, const Tensor& gt);

// Max F-beta (beta^2 = 0.3) over the 256 thresholds {0..255}/255,
// binarizing at pred >= t. Thresholds with an empty prediction score 0.
double max_f(const Tensor& pred, const Tensor& gt);

// Weighted F-beta (beta = 1): errors at background pixels are substituted
// by the error at the nearest foreground pixel, blurred with a 7x7
// Gaussian (sigma 5, zero padding); background importance decays
// exponentially with distance from the foreground.
double weighted_f(const Tensor& pred, const Tensor& gt);

// Structural similarity: 0.5 * object-level + 0.5 * region-level score
// over centroid-split quadrants, clamped to [0,..]; all-empty /
// all-foreground ground truths short-circuit to 1-mean(pred) / mean(pred).
double s_measure(const Tensor& pred, const Tensor& gt);

// Enhanced alignment: mean over pixels of the enhanced alignment term of
// the binarized prediction; e_measure_max takes the best of the 256
// thresholds, e_measure_mean their average.
double e_measure_max(const Tensor& pred, const Tensor& gt);
double e_measure_mean(const Tensor& pred, const Tensor& gt);

struct MetricsReport {
    double fwb = 0.0;
    double fm_max = 0.0;
    double s_measure = 0.0;
    double e_measure = 0.0;  // max over thresholds
    double e_mean = 0.0;     // secondary: mean over thresholds
    double mae = 0.0;
    int n_images = 0;
};

// Pairs same-named grayscale files from the two directories (predictions
// are resized bilinearly to the ground-truth size when they differ),
// averages the per-image metrics. Throws ValidationError when no pair
// exists ("no evaluation pairs").
MetricsReport evaluate_directory(const std::string& pred_dir, const std::string& gt_dir);

std::string report_json(const MetricsReport& r);
std::string report_csv(const MetricsReport& r);

}  // namespace glformer::metrics
