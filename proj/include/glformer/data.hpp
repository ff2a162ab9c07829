// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "glformer/rng.hpp"
#include "glformer/tensor.hpp"

namespace glformer::data {

// One image/mask pair: image (3,H,W) in [0,1], mask (1,H,W) binary.
struct Sample {
    Tensor image;
    Tensor mask;
    std::string name;
};

// Dataset layout: <root>/<split>/images/*.{png,jpg,jpeg} with a same-stem
// .png for each under <root>/<split>/masks/.
struct DatasetSpec {
    std::string root;
    std::string split;  // "train" or "test"
};

// Loads every pair resized to (target_h, target_w): images bilinearly,
// masks by nearest neighbor then binarized at 0.5. Missing directories,
// images without masks, and masks without images raise ValidationError
// naming the offending path.
std::vector<Sample> load_dataset(const DatasetSpec& spec, int target_h, int target_w);

// Reads one color image as (3,target_h,target_w) RGB in [0,1], resized
// bilinearly; the size on disk is reported through orig_h/orig_w when
// given. Unreadable files raise RuntimeFailure naming the path.
Tensor load_image(const std::string& path, int target_h, int target_w, int* orig_h = nullptr,
                  int* orig_w = nullptr);

// In-place transforms on (C,H,W) tensors.
void flip_horizontal(Tensor& t);
void rotate90(Tensor& t, int quarter_turns);  // counter-clockwise

// Coin-flip horizontal flip plus a uniform quarter-turn rotation (square
// tensors; non-square samples only draw from {0, 180} degrees). Image and
// mask receive identical transforms; draw order: flip coin, then turns.
void augment_sample(Sample& s, RandomSource& rng);

struct Batch {
    Tensor images;  // (B,3,H,W)
    Tensor masks;   // (B,1,H,W)
    std::vector<std::string> names;
};

// Shuffled index batches for one epoch (Fisher-Yates under rng); the last
// partial batch is kept.
std::vector<std::vector<int>> epoch_batches(int n, int batch_size, RandomSource& rng);

Batch make_batch(const std::vector<Sample>& samples, const std::vector<int>& indices, bool augment,
                 RandomSource& rng);

// Synthetic corpus: each image is 1-3 analytic shapes (ellipses and
// rectangles) blended over textured value noise; the mask is the exact
// rasterization of the shape inequalities at integer pixel coordinates.
// Pairs are written under <out_dir>/train/{images,masks} and mirrored to
// <out_dir>/test, with every accepted shape parameter recorded in
// <out_dir>/manifest.json. Samples with under 1% foreground are redrawn.
void synth_dataset(int n, int size, std::uint64_t seed, const std::string& out_dir);

// Pixel (y,x) is foreground iff inside the shape: for ellipses
// (u/a)^2 + (v/b)^2 <= 1 and for rectangles |u| <= a && |v| <= b, where
// u = (x-cx)cos(angle) + (y-cy)sin(angle), v = -(x-cx)sin(angle) +
// (y-cy)cos(angle). Exposed so tests can re-rasterize from the manifest.
struct ShapeSpec {
    std::string kind;  // "ellipse" | "rectangle"
    double cx = 0.0, cy = 0.0;
    double a = 0.0, b = 0.0;
    double angle = 0.0;
};

bool shape_contains(const ShapeSpec& s, int y, int x);
Tensor rasterize_shapes(const std::vector<ShapeSpec>& shapes, int h, int w);  // (1,H,W)

}  // namespace glformer::data
