// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "glformer/tensor.hpp"

namespace glformer::ag {

// One node of the reverse-mode tape. Ops build nodes eagerly; backward()
// walks the graph in reverse topological order and calls each node's
// backward_fn to push cotangents into its inputs.
struct Var {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::string name;  // set for parameters only
    std::vector<std::shared_ptr<Var>> inputs;
    std::function<void(Var&)> backward_fn;

    Tensor& ensure_grad() {
        if (grad.empty()) grad = Tensor(value.shape());
        return grad;
    }
};

using VarPtr = std::shared_ptr<Var>;

VarPtr constant(Tensor v);
VarPtr parameter(Tensor v, std::string name);

// Global gradient mode. When disabled, ops skip tape construction and
// produce leaf nodes holding only values.
bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGrad {
    NoGrad() : prev_(grad_enabled()) { set_grad_enabled(false); }
    ~NoGrad() { set_grad_enabled(prev_); }
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;

private:
    bool prev_;
};

// Scalar-rooted reverse pass. Seeds d(root)/d(root) = 1 and accumulates
// into .grad of every reachable node with requires_grad.
void backward(const VarPtr& root);

// Cost accounting for the model-budget audit. While a counter is
// installed, compute-bearing ops add their operation counts to it.
struct FlopCounter {
    double conv = 0.0;
    double linear = 0.0;
    double attention = 0.0;
    double fft = 0.0;
    double total() const { return conv + linear + attention + fft; }
};

void set_flop_counter(FlopCounter* counter);
FlopCounter* flop_counter();

namespace detail {

// Builds a tape node. The backward function is attached only while
// gradients are enabled and at least one input requires them.
VarPtr make_node(Tensor value, std::vector<VarPtr> inputs, std::function<void(Var&)> bw);
void accum_all(Var& dst, const Tensor& g);

}  // namespace detail

}  // namespace glformer::ag
