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

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ctfgan/autograd.hpp"
#include "ctfgan/errors.hpp"
#include "ctfgan/tensor.hpp"

namespace ctfgan::nn {

// Base for trainable components. Parameters, persistent buffers and child
// modules are registered by name; state collection walks the tree producing
// dotted paths in registration order, which fixes the serialization layout.
class Module {
 public:
  Module() = default;
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  bool training() const { return training_; }

  void set_training(bool t) {
    training_ = t;
    for (auto& [name, child] : children_) child->set_training(t);
  }

  void named_params(const std::string& prefix,
                    std::vector<std::pair<std::string, Var*>>& out) {
    for (auto& [name, p] : params_) out.emplace_back(prefix + name, p);
    for (auto& [name, child] : children_) child->named_params(prefix + name + ".", out);
  }

  void named_buffers(const std::string& prefix,
                     std::vector<std::pair<std::string, Tensor*>>& out) {
    for (auto& [name, b] : buffers_) out.emplace_back(prefix + name, b);
    for (auto& [name, child] : children_) child->named_buffers(prefix + name + ".", out);
  }

  std::vector<std::pair<std::string, Var*>> named_params() {
    std::vector<std::pair<std::string, Var*>> out;
    named_params("", out);
    return out;
  }

  std::vector<std::pair<std::string, Tensor*>> named_buffers() {
    std::vector<std::pair<std::string, Tensor*>> out;
    named_buffers("", out);
    return out;
  }

  std::vector<Var*> params() {
    std::vector<Var*> out;
    for (auto& [name, p] : named_params()) out.push_back(p);
    return out;
  }

  std::int64_t param_count() {
    std::int64_t n = 0;
    for (auto* p : params()) n += p->numel();
    return n;
  }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }

  // Params and buffers flattened to named tensors, for checkpoints.
  std::map<std::string, Tensor> state_dict() {
    std::map<std::string, Tensor> out;
    for (auto& [name, p] : named_params()) {
      check_contract(out.emplace("p." + name, p->value()).second,
                     "state_dict: duplicate parameter name " + name);
    }
    for (auto& [name, b] : named_buffers()) {
      check_contract(out.emplace("b." + name, *b).second,
                     "state_dict: duplicate buffer name " + name);
    }
    return out;
  }

  void load_state_dict(const std::map<std::string, Tensor>& state) {
    auto take = [&](const std::string& key, const Shape& shape) -> const Tensor& {
      auto it = state.find(key);
      if (it == state.end()) throw IntegrityError("state entry missing: " + key);
      if (it->second.shape() != shape)
        throw IntegrityError("state entry " + key + " has shape " +
                             shape_str(it->second.shape()) + ", expected " + shape_str(shape));
      return it->second;
    };
    std::size_t used = 0;
    for (auto& [name, p] : named_params()) {
      p->mutable_value() = take("p." + name, p->shape());
      ++used;
    }
    for (auto& [name, b] : named_buffers()) {
      *b = take("b." + name, b->shape());
      ++used;
    }
    if (used != state.size())
      throw IntegrityError("state has " + std::to_string(state.size()) +
                           " entries, module expects " + std::to_string(used));
  }

 protected:
  void add_param(const std::string& name, Var* v) { params_.emplace_back(name, v); }
  void add_buffer(const std::string& name, Tensor* t) { buffers_.emplace_back(name, t); }
  void add_child(const std::string& name, Module* m) { children_.emplace_back(name, m); }

 private:
  bool training_ = true;
  std::vector<std::pair<std::string, Var*>> params_;
  std::vector<std::pair<std::string, Tensor*>> buffers_;
  std::vector<std::pair<std::string, Module*>> children_;
};

}  // namespace ctfgan::nn
