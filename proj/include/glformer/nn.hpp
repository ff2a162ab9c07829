// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "glformer/ops.hpp"

namespace glformer::nn {

enum class Init {
    kTruncNormal,  // projections: trunc normal, std 0.02, cut at 2 std
    kFanIn,        // convolutions: normal, std sqrt(2 / fan_in)
    kZero,
    kOne,
};

struct ParamInfo {
    ag::VarPtr var;
    std::string name;
    Init init = Init::kZero;
    std::int64_t fan_in = 0;
};

struct BufferInfo {
    std::shared_ptr<Tensor> tensor;
    std::string name;
    double initial = 0.0;
};

// Owns every learnable tensor of a model, keyed by hierarchical name
// ("encoder.stage1.embed.weight"). Layers register into it at construction;
// the optimizer, checkpointing, and the parameter audit all walk it.
class Registry {
public:
    ag::VarPtr add(const std::string& name, std::vector<int> shape, Init init, std::int64_t fan_in = 0);
    std::shared_ptr<Tensor> add_buffer(const std::string& name, std::vector<int> shape, double initial);

    const std::vector<ParamInfo>& params() const { return params_; }
    const std::vector<BufferInfo>& buffers() const { return buffers_; }
    const ParamInfo* find(const std::string& name) const;
    std::int64_t total_count() const;
    std::int64_t count_with_prefix(const std::string& prefix) const;

    // Training flag consumed by batch-norm layers.
    bool training = false;

private:
    std::vector<ParamInfo> params_;
    std::vector<BufferInfo> buffers_;
};

// Fills every parameter per its declared Init rule. Each parameter draws
// from its own stream seeded by (seed, name) so the result is independent
// of registration order.
void initialize(Registry& reg, std::uint64_t seed);

// Layer wrappers: construct once (registering parameters), then call.

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(Registry& reg, const std::string& name, int cin, int cout, int k, int stride, int pad,
           int dilation = 1, int groups = 1, bool bias = true, Init init = Init::kFanIn);
    ag::VarPtr operator()(const ag::VarPtr& x) const;

    ag::VarPtr weight, bias;

private:
    int stride_ = 1, pad_ = 0, dilation_ = 1, groups_ = 1;
};

class Linear {
public:
    Linear() = default;
    Linear(Registry& reg, const std::string& name, int cin, int cout, bool bias = true,
           Init init = Init::kTruncNormal);
    ag::VarPtr operator()(const ag::VarPtr& x) const;

    ag::VarPtr weight, bias;
};

class LayerNormChw {
public:
    LayerNormChw() = default;
    LayerNormChw(Registry& reg, const std::string& name, int channels);
    ag::VarPtr operator()(const ag::VarPtr& x) const;

    ag::VarPtr gamma, beta;
};

class BatchNorm2d {
public:
    BatchNorm2d() = default;
    BatchNorm2d(Registry& reg, const std::string& name, int channels);
    ag::VarPtr operator()(const ag::VarPtr& x) const;

    ag::VarPtr gamma, beta;
    std::shared_ptr<Tensor> running_mean, running_var;

private:
    Registry* reg_ = nullptr;
};

}  // namespace glformer::nn
