// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <memory>

#include "glformer/config.hpp"
#include "glformer/decoder.hpp"
#include "glformer/encoder.hpp"
#include "glformer/nn.hpp"

namespace glformer {

// Full segmentation network. forward() maps a (B,3,H,W) image in [0,1] to
// five single-channel logit maps at the input resolution, finest first;
// logits[0] is the primary prediction.
class Model {
public:
    explicit Model(const ModelConfig& cfg);

    // Batch-norm layers keep a pointer into the registry, so the model
    // must stay at one address; heap-allocate when ownership must move.
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    std::array<ag::VarPtr, 5> forward(const ag::VarPtr& image);

    const ModelConfig& config() const { return cfg_; }
    nn::Registry& registry() { return reg_; }
    const nn::Registry& registry() const { return reg_; }

    void set_training(bool on) { reg_.training = on; }

    std::unique_ptr<PyramidEncoder> encoder;
    std::unique_ptr<PyramidDecoder> decoder;

private:
    ModelConfig cfg_;
    nn::Registry reg_;
};

}  // namespace glformer
