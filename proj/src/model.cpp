// SPDX-License-Identifier: Apache-2.0
#include "glformer/model.hpp"

namespace glformer {

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    encoder = std::make_unique<PyramidEncoder>(reg_, "encoder", cfg_);
    decoder = std::make_unique<PyramidDecoder>(reg_, "decoder", "heads", cfg_);
}

std::array<ag::VarPtr, 5> Model::forward(const ag::VarPtr& image) {
    const int h = image->value.dim(2), w = image->value.dim(3);
    const auto pyramid = (*encoder)(image);
    return (*decoder)(pyramid, h, w);
}

}  // namespace glformer
