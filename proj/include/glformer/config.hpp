// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace glformer {

// Architecture hyperparameters. Every module sizes itself from this; all
// invariants are enforced by validate() with errors naming the key.
struct ModelConfig {
    std::array<int, 4> stage_channels{64, 128, 320, 512};
    std::array<int, 4> stage_depths{2, 2, 4, 4};
    std::array<int, 4> stage_heads{1, 2, 5, 8};
    std::array<int, 4> sr_ratios{8, 4, 2, 1};
    int ffn_expansion = 4;
    int decoder_channels = 128;
    int input_h = 352;
    int input_w = 352;
    std::array<int, 3> local_kernels{3, 5, 7};
    std::array<int, 4> gate_dilations{1, 3, 5, 7};

    void validate() const;  // throws ValidationError naming the offending key
    bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
    double learning_rate = 1e-4;
    double lr_decay_factor = 0.1;
    int lr_decay_every = 40;
    int batch_size = 4;
    int epochs = 80;
    bool augment = true;
    std::int64_t seed = 1;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

struct Config {
    ModelConfig model;
    TrainConfig train;
    bool operator==(const Config&) const = default;
};

// Line-oriented `key = value` text; `#` starts a comment; list values are
// comma-separated. Unknown keys and malformed values raise ValidationError
// with the line number; missing keys keep their defaults.
Config parse_config(const std::string& text);
Config load_config(const std::string& path);
std::string serialize_config(const Config& cfg);

// Paper-scale architecture (budget targets from the efficiency tables).
ModelConfig default_paper_config();

// Small architecture for laptop-scale training and tests.
ModelConfig desk_config();

}  // namespace glformer
