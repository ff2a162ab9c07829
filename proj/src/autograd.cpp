// SPDX-License-Identifier: Apache-2.0
#include "glformer/autograd.hpp"

#include <unordered_set>

namespace glformer::ag {

namespace {
bool g_grad_enabled = true;
FlopCounter* g_flop_counter = nullptr;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

void set_flop_counter(FlopCounter* counter) { g_flop_counter = counter; }
FlopCounter* flop_counter() { return g_flop_counter; }

VarPtr constant(Tensor v) {
    auto node = std::make_shared<Var>();
    node->value = std::move(v);
    return node;
}

VarPtr parameter(Tensor v, std::string name) {
    auto node = std::make_shared<Var>();
    node->value = std::move(v);
    node->requires_grad = true;
    node->name = std::move(name);
    return node;
}

namespace detail {

VarPtr make_node(Tensor value, std::vector<VarPtr> inputs, std::function<void(Var&)> bw) {
    auto node = std::make_shared<Var>();
    node->value = std::move(value);
    if (g_grad_enabled) {
        bool req = false;
        for (const auto& in : inputs) req = req || (in && in->requires_grad);
        if (req) {
            node->requires_grad = true;
            node->inputs = std::move(inputs);
            node->backward_fn = std::move(bw);
        }
    }
    return node;
}

void accum_all(Var& dst, const Tensor& g) {
    Tensor& gd = dst.ensure_grad();
    const double* s = g.data();
    double* d = gd.data();
    for (std::int64_t i = 0; i < g.numel(); ++i) d[i] += s[i];
}

}  // namespace detail

void backward(const VarPtr& root) {
    if (!root || root->value.numel() != 1) throw std::invalid_argument("backward needs a scalar root");
    // Iterative post-order topological sort; recursion depth would track
    // network depth otherwise.
    std::vector<Var*> order;
    std::unordered_set<Var*> seen;
    std::vector<std::pair<Var*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->inputs.size()) {
            Var* child = node->inputs[idx].get();
            ++idx;
            if (child->requires_grad && !seen.count(child)) {
                seen.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Var* node = *it;
        if (node->backward_fn && node->requires_grad && !node->grad.empty()) node->backward_fn(*node);
    }
}

}  // namespace glformer::ag
