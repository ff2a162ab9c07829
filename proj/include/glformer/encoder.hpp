// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "glformer/config.hpp"
#include "glformer/nn.hpp"
#include "glformer/spectral_merge.hpp"

namespace glformer {

// Multi-head self-attention whose keys/values come from a spatially
// reduced copy of the input (strided conv + layer norm), so attention
// cost scales with (tokens * tokens / sr^2).
class GlobalBranch {
public:
    GlobalBranch() = default;
    GlobalBranch(nn::Registry& reg, const std::string& name, int channels, int heads, int sr_ratio);

    // x: (B,C,H,W), already normalized by the caller. attn_out, when given,
    // receives the post-softmax attention probabilities (B,h,T,T_kv).
    ag::VarPtr operator()(const ag::VarPtr& x, ag::VarPtr* attn_out = nullptr) const;

    nn::Linear q, k, v;
    nn::Conv2d sr;
    nn::LayerNormChw sr_norm;

private:
    int heads_ = 1;
    int sr_ratio_ = 1;
};

// Three sequential pointwise+depthwise branches with kernels 3, 5, 7;
// branch k sees the input plus the previous branch's output, the three
// outputs are summed and mixed by a final 1x1. Composed footprint of an
// impulse stays within 13x13.
class LocalBranch {
public:
    LocalBranch() = default;
    LocalBranch(nn::Registry& reg, const std::string& name, int channels,
                const std::array<int, 3>& kernels = {3, 5, 7});

    ag::VarPtr operator()(const ag::VarPtr& x) const;

    std::array<nn::Conv2d, 3> pw, dw;
    nn::Conv2d aggregate;
};

// One token-mixing block: a single shared normalization feeds the global
// and local branches, whose outputs are fused in the frequency domain with
// the block input as the residual.
class AttentionMixer {
public:
    AttentionMixer() = default;
    AttentionMixer(nn::Registry& reg, const std::string& name, int channels, int heads, int sr_ratio);

    ag::VarPtr operator()(const ag::VarPtr& x) const;

    nn::LayerNormChw norm;
    GlobalBranch global;
    LocalBranch local;
    SpectralMerge merge;
};

// Gated feed-forward block: a widening projection feeds (a) a depthwise
// gate and (b) four channel splits refined hierarchically (split z also
// sees split z-1); the refined stack plus gate are multiplied under GELU
// and projected back. The final projection is zero-initialized so the
// block starts as the identity.
class GatedFfn {
public:
    GatedFfn() = default;
    GatedFfn(nn::Registry& reg, const std::string& name, int channels, int expansion);

    ag::VarPtr operator()(const ag::VarPtr& x) const;

    nn::LayerNormChw norm;
    nn::Conv2d proj_in, gate_dw;
    std::array<nn::Conv2d, 4> split_dw;
    nn::Conv2d proj_out;

private:
    int hidden_ = 0;
};

struct EncoderStage {
    nn::Conv2d embed;
    nn::LayerNormChw embed_norm;
    std::vector<AttentionMixer> mixers;
    std::vector<GatedFfn> ffns;
};

// Four-stage pyramid: each stage embeds with an overlapping strided conv
// (stride 4, then 2,2,2) and runs depth x (mixer + gated FFN). Outputs
// have resolutions input/4, /8, /16, /32 with the configured widths.
class PyramidEncoder {
public:
    PyramidEncoder(nn::Registry& reg, const std::string& name, const ModelConfig& cfg);

    std::array<ag::VarPtr, 4> operator()(const ag::VarPtr& image) const;

    std::array<EncoderStage, 4> stages;

private:
    ModelConfig cfg_;
};

}  // namespace glformer
