/*
Copyright 2026 the ctfgan authors
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
you may obtain a copy of the License at

                http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ctfgan/errors.hpp"
#include "ctfgan/tensor.hpp"

// Reverse-mode tape over Tensor. Ops record their inputs and a backward
// closure; backward() walks the graph once in reverse topological order.
namespace ctfgan {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<NodePtr> inputs;
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  Tensor& ensure_grad() {
    if (!grad.defined() || !grad.same_shape(value)) grad = Tensor(value.shape());
    return grad;
  }
};

namespace detail {
inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

// RAII switch that suppresses graph construction (inference / buffer math).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled()) { detail::grad_enabled() = false; }
  ~NoGradGuard() { detail::grad_enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled(); }

// Value-semantics handle to a graph node.
class Var {
 public:
  Var() = default;

  explicit Var(Tensor value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad && grad_enabled();
  }

  static Var leaf(Tensor value, bool requires_grad = false) {
    Var v;
    v.node_ = std::make_shared<Node>();
    v.node_->value = std::move(value);
    v.node_->requires_grad = requires_grad;
    return v;
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& ensure_grad() const { return node_->ensure_grad(); }
  void zero_grad() const {
    if (node_ && node_->grad.defined()) node_->grad.fill(0.0);
  }
  NodePtr node() const { return node_; }

  // A new leaf sharing this value but cut off from the graph.
  Var detach() const { return Var::leaf(node_->value, false); }

 private:
  NodePtr node_;
};

// Builds an op node. The backward closure receives the output node and must
// accumulate into its inputs' grads (inputs are guaranteed alive).
inline Var make_op(const char* name, Tensor value, std::vector<Var> inputs,
                   std::function<void(Node&)> backward) {
  bool needs = false;
  if (grad_enabled())
    for (const auto& in : inputs)
      if (in.requires_grad()) needs = true;
  Var out = Var::leaf(std::move(value), needs);
  if (needs) {
    out.node()->op = name;
    out.node()->backward = std::move(backward);
    out.node()->inputs.reserve(inputs.size());
    for (auto& in : inputs) out.node()->inputs.push_back(in.node());
  }
  return out;
}

// Accumulate g into the node's grad if it participates in the graph.
inline void accumulate(const NodePtr& node, const Tensor& g) {
  if (!node->requires_grad) return;
  Tensor& slot = node->ensure_grad();
  check_contract(slot.same_shape(g), "autograd: gradient shape mismatch");
  for (std::int64_t i = 0; i < g.numel(); ++i) slot[i] += g[i];
}

// Reverse pass from a scalar loss. Gradients accumulate into every node with
// requires_grad reachable from `loss`.
inline void backward(const Var& loss) {
  check_contract(loss.defined() && loss.numel() == 1, "backward: loss must be a scalar");
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad().fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.defined()) n->backward(*n);
  }
}

}  // namespace ctfgan
