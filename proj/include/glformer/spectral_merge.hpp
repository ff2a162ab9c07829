// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "glformer/nn.hpp"

namespace glformer {

// Frequency-domain fusion of two same-shaped feature maps. Both maps are
// transformed with a real 2-D FFT; a learned per-bin gain in (0,2) --
// derived from both spectra and balanced so the result stays conjugate-
// symmetric -- scales their sum, the originals are added back, and the
// inverse transform returns to pixels through a 1x1 projection plus a
// residual connection.
//
// Spectra are carried as real tensors (B, 2C, H, W/2+1) with the real and
// imaginary parts stacked as channel halves; the gain multiplies both
// halves identically, so it scales magnitudes and preserves phase.
class SpectralMerge {
public:
    SpectralMerge() = default;
    SpectralMerge(nn::Registry& reg, const std::string& name, int channels, bool zero_init_out = true);

    ag::VarPtr operator()(const ag::VarPtr& local, const ag::VarPtr& global_,
                          const ag::VarPtr& residual) const;

    // Per-bin gain before mirror balancing; each entry is a sum of two
    // sigmoids, hence strictly inside (0,2). Exposed for invariant tests.
    ag::VarPtr gain(const ag::VarPtr& spec_local, const ag::VarPtr& spec_global) const;

    nn::Conv2d mix_in_local, mix_out_local;
    nn::Conv2d mix_in_global, mix_out_global;
    nn::BatchNorm2d bn_local, bn_global;
    nn::Conv2d out_proj;
};

}  // namespace glformer
