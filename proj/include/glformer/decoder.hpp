// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>

#include "glformer/config.hpp"
#include "glformer/encoder.hpp"
#include "glformer/nn.hpp"
#include "glformer/spectral_merge.hpp"

namespace glformer {

// 1x1 -> 3x3 -> 1x1 conv sandwich with batch norm, ReLU between stages and
// plain norm at the end. zero_init_out makes the whole block emit exact
// zeros at initialization.
class ConvSandwich {
public:
    ConvSandwich() = default;
    ConvSandwich(nn::Registry& reg, const std::string& name, int cin, int cout,
                 bool zero_init_out = false);

    ag::VarPtr operator()(const ag::VarPtr& x) const;

    nn::Conv2d c_in, c_mid, c_out;
    nn::BatchNorm2d bn_in, bn_mid, bn_out;
};

// Channel gate (pooled MLP) followed by a spatial gate (7x7 conv over
// pooled mean/max planes); both gates are sigmoids in (0,1).
class JointAttention {
public:
    JointAttention() = default;
    JointAttention(nn::Registry& reg, const std::string& name, int channels);

    ag::VarPtr operator()(const ag::VarPtr& x) const;

    nn::Linear mlp_in, mlp_out;
    nn::Conv2d spatial;
};

// Per-level entry: project an encoder feature to the decoder width, gate
// it with joint attention, then layer-normalize.
class LevelProjection {
public:
    LevelProjection() = default;
    LevelProjection(nn::Registry& reg, const std::string& name, int cin, int cout);

    ag::VarPtr operator()(const ag::VarPtr& x) const;

    ConvSandwich project;
    JointAttention attend;
    nn::LayerNormChw norm;
};

// Densely connected dilated-conv pyramid over the deepest encoder feature;
// each dilation branch sees the entry projection plus every earlier branch
// output. Produces the decoder-width semantic top.
class DilatedPyramid {
public:
    DilatedPyramid() = default;
    DilatedPyramid(nn::Registry& reg, const std::string& name, int cin, int cout);

    ag::VarPtr operator()(const ag::VarPtr& x) const;

    static constexpr std::array<int, 4> kDilations{3, 6, 12, 18};
    nn::Conv2d entry;
    nn::BatchNorm2d entry_bn;
    std::array<nn::Conv2d, 4> compress, dilated;
    std::array<nn::BatchNorm2d, 4> compress_bn, dilated_bn;
    nn::Conv2d exit;
    nn::BatchNorm2d exit_bn;
};

// Cross-level fusion: the coarse map is upsampled to the fine grid, each
// level forms queries/keys from itself but takes values from the other
// level (two exchanged attention streams, one head); a parameter-free
// pooled reduction shrinks keys/values. The exchanged-attention sum and a
// summed local-branch stream are fused spectrally with the fine map as
// the residual.
class CrossLevelFusion {
public:
    struct Probes {
        ag::VarPtr attn_fine, attn_coarse;  // post-softmax rows
        ag::VarPtr exchanged;               // summed attention streams, map layout
        ag::VarPtr local;                   // summed local-branch stream
    };

    CrossLevelFusion() = default;
    CrossLevelFusion(nn::Registry& reg, const std::string& name, int channels, int sr_ratio);

    ag::VarPtr operator()(const ag::VarPtr& coarse, const ag::VarPtr& fine,
                          Probes* probes = nullptr) const;

    nn::Linear q_fine, k_fine, v_fine;
    nn::Linear q_coarse, k_coarse, v_coarse;
    nn::LayerNormChw kv_norm_fine, kv_norm_coarse;
    LocalBranch local_fine, local_coarse;
    SpectralMerge merge;

private:
    int sr_ratio_ = 1;
};

// Structural gate: four dilated 3x3 branches over a shared 1x1 projection,
// each mapped through 1 - sigmoid, summed into a single-channel map in
// (0,4) that modulates a projected copy of the input before fusion with
// an unmodulated copy and a residual.
class StructureGate {
public:
    StructureGate() = default;
    StructureGate(nn::Registry& reg, const std::string& name, int channels,
                  const std::array<int, 4>& dilations);

    ag::VarPtr operator()(const ag::VarPtr& x, ag::VarPtr* gate_out = nullptr) const;

    nn::Conv2d pre;
    std::array<nn::Conv2d, 4> atrous;
    nn::Conv2d proj, fuse;
};

// Final per-level fusion: concat(cross-fused, structure-gated, projected
// entry) through a zero-initialized sandwich plus the entry as residual,
// so the level starts as a pass-through of its projected encoder feature.
class LevelFusion {
public:
    LevelFusion() = default;
    LevelFusion(nn::Registry& reg, const std::string& name, int channels);

    ag::VarPtr operator()(const ag::VarPtr& cross, const ag::VarPtr& gated,
                          const ag::VarPtr& entry) const;

    nn::Conv2d reduce;
    ConvSandwich fuse;
};

// Top-down decoder: semantic top from the dilated pyramid, then per level
// (4 -> 1) project, cross-fuse with the running map, structure-gate, and
// fuse. Emits five single-channel logit maps (levels 1-4 + semantic top)
// upsampled to the requested output size.
class PyramidDecoder {
public:
    PyramidDecoder(nn::Registry& reg, const std::string& name, const std::string& head_name,
                   const ModelConfig& cfg);

    std::array<ag::VarPtr, 5> operator()(const std::array<ag::VarPtr, 4>& pyramid, int out_h,
                                          int out_w) const;

    DilatedPyramid semantic_top;
    std::array<LevelProjection, 4> project;
    std::array<CrossLevelFusion, 4> cross;
    std::array<StructureGate, 4> gate;
    std::array<LevelFusion, 4> fuse;
    std::array<nn::Conv2d, 5> heads;  // heads[0..3]: levels 1..4; heads[4]: semantic top
};

}  // namespace glformer
