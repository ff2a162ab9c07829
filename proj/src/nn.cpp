// SPDX-License-Identifier: Apache-2.0
#include "glformer/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "glformer/rng.hpp"

namespace glformer::nn {

ag::VarPtr Registry::add(const std::string& name, std::vector<int> shape, Init init, std::int64_t fan_in) {
    for (const auto& p : params_) {
        if (p.name == name) throw std::logic_error("duplicate parameter name: " + name);
    }
    ParamInfo info;
    info.var = ag::parameter(Tensor(std::move(shape)), name);
    info.name = name;
    info.init = init;
    info.fan_in = fan_in;
    params_.push_back(info);
    return params_.back().var;
}

std::shared_ptr<Tensor> Registry::add_buffer(const std::string& name, std::vector<int> shape, double initial) {
    BufferInfo info;
    info.tensor = std::make_shared<Tensor>(std::move(shape));
    info.tensor->fill(initial);
    info.name = name;
    info.initial = initial;
    buffers_.push_back(info);
    return buffers_.back().tensor;
}

const ParamInfo* Registry::find(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

std::int64_t Registry::total_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.var->value.numel();
    return n;
}

std::int64_t Registry::count_with_prefix(const std::string& prefix) const {
    std::int64_t n = 0;
    for (const auto& p : params_) {
        if (p.name.rfind(prefix, 0) == 0) n += p.var->value.numel();
    }
    return n;
}

void initialize(Registry& reg, std::uint64_t seed) {
    for (const auto& p : reg.params()) {
        Tensor& v = p.var->value;
        RandomSource rng(seed ^ fnv1a(p.name));
        switch (p.init) {
        case Init::kZero:
            v.fill(0.0);
            break;
        case Init::kOne:
            v.fill(1.0);
            break;
        case Init::kTruncNormal:
            for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = rng.trunc_normal(0.02);
            break;
        case Init::kFanIn: {
            const double std = std::sqrt(2.0 / static_cast<double>(p.fan_in > 0 ? p.fan_in : 1));
            for (std::int64_t i = 0; i < v.numel(); ++i) v[i] = rng.gaussian() * std;
            break;
        }
        }
    }
    for (const auto& b : reg.buffers()) b.tensor->fill(b.initial);
}

Conv2d::Conv2d(Registry& reg, const std::string& name, int cin, int cout, int k, int stride, int pad,
               int dilation, int groups, bool with_bias, Init init)
    : stride_(stride), pad_(pad), dilation_(dilation), groups_(groups) {
    const int cin_g = cin / groups;
    weight = reg.add(name + ".weight", {cout, cin_g, k, k}, init,
                     static_cast<std::int64_t>(cin_g) * k * k);
    if (with_bias) bias = reg.add(name + ".bias", {cout}, Init::kZero);
}

ag::VarPtr Conv2d::operator()(const ag::VarPtr& x) const {
    return ag::conv2d(x, weight, bias, stride_, pad_, dilation_, groups_);
}

Linear::Linear(Registry& reg, const std::string& name, int cin, int cout, bool with_bias, Init init) {
    weight = reg.add(name + ".weight", {cout, cin}, init, cin);
    if (with_bias) bias = reg.add(name + ".bias", {cout}, Init::kZero);
}

ag::VarPtr Linear::operator()(const ag::VarPtr& x) const { return ag::linear(x, weight, bias); }

LayerNormChw::LayerNormChw(Registry& reg, const std::string& name, int channels) {
    gamma = reg.add(name + ".gamma", {channels}, Init::kOne);
    beta = reg.add(name + ".beta", {channels}, Init::kZero);
}

ag::VarPtr LayerNormChw::operator()(const ag::VarPtr& x) const {
    return ag::layernorm_chw(x, gamma, beta);
}

BatchNorm2d::BatchNorm2d(Registry& reg, const std::string& name, int channels) : reg_(&reg) {
    gamma = reg.add(name + ".gamma", {channels}, Init::kOne);
    beta = reg.add(name + ".beta", {channels}, Init::kZero);
    running_mean = reg.add_buffer(name + ".running_mean", {channels}, 0.0);
    running_var = reg.add_buffer(name + ".running_var", {channels}, 1.0);
}

ag::VarPtr BatchNorm2d::operator()(const ag::VarPtr& x) const {
    return ag::batchnorm2d(x, gamma, beta, running_mean.get(), running_var.get(), reg_->training);
}

}  // namespace glformer::nn
