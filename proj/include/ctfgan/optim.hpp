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

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ctfgan/autograd.hpp"
#include "ctfgan/errors.hpp"
#include "ctfgan/tensor.hpp"

namespace ctfgan {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double eps = 1e-8;
};

// Adaptive-moment optimizer over named parameters. Moments are addressable
// by parameter name so the whole state round-trips through checkpoints.
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Var*>> params, const AdamConfig& cfg)
      : cfg_(cfg), params_(std::move(params)) {
    check_contract(cfg.lr >= 0.0 && cfg.eps > 0.0, "adam: rates must be non-negative");
    check_contract(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0,
                   "adam: betas must lie in [0,1)");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto& [name, p] : params_) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
  }

  const AdamConfig& config() const { return cfg_; }
  std::int64_t step_count() const { return t_; }

  void zero_grad() {
    for (auto& [name, p] : params_) p->zero_grad();
  }

  // One update. Parameters whose gradient was never produced this step are
  // skipped entirely, so untouched parameters stay bit-identical.
  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Var* p = params_[i].second;
      const Tensor& g = p->node()->grad;
      if (!g.defined()) continue;
      check_contract(g.same_shape(p->value()), "adam: gradient shape mismatch for " +
                                                   params_[i].first);
      Tensor& val = p->mutable_value();
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      for (std::int64_t j = 0; j < val.numel(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        val[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  // Moments and the step counter, keyed for checkpointing.
  std::map<std::string, Tensor> state_dict() const {
    std::map<std::string, Tensor> out;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.emplace("m." + params_[i].first, m_[i]);
      out.emplace("v." + params_[i].first, v_[i]);
    }
    out.emplace("t", Tensor({1}, {static_cast<double>(t_)}));
    return out;
  }

  void load_state_dict(const std::map<std::string, Tensor>& sd) {
    if (sd.size() != 2 * params_.size() + 1)
      throw IntegrityError("adam: state entry count mismatch: expected " +
                           std::to_string(2 * params_.size() + 1) + ", got " +
                           std::to_string(sd.size()));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto mi = sd.find("m." + params_[i].first);
      const auto vi = sd.find("v." + params_[i].first);
      if (mi == sd.end() || vi == sd.end())
        throw IntegrityError("adam: missing state for " + params_[i].first);
      if (!mi->second.same_shape(m_[i]) || !vi->second.same_shape(v_[i]))
        throw IntegrityError("adam: state shape mismatch for " + params_[i].first);
      m_[i] = mi->second;
      v_[i] = vi->second;
    }
    const auto ti = sd.find("t");
    if (ti == sd.end() || ti->second.numel() != 1)
      throw IntegrityError("adam: missing step counter");
    t_ = static_cast<std::int64_t>(ti->second[0]);
  }

 private:
  AdamConfig cfg_;
  std::vector<std::pair<std::string, Var*>> params_;
  std::vector<Tensor> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace ctfgan
