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
#include <vector>

#include "ctfgan/nn/module.hpp"
#include "ctfgan/ops.hpp"
#include "ctfgan/rng.hpp"

namespace ctfgan::nn {

inline Tensor glorot_uniform(const Shape& shape, std::int64_t fan_in, std::int64_t fan_out,
                             RngStream& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-limit, limit);
  return t;
}

class Conv2d : public Module {
 public:
  Conv2d(std::int64_t in_ch, std::int64_t out_ch, std::int64_t k, std::int64_t pad,
         RngStream& rng)
      : pad_(pad),
        w_(Var::leaf(glorot_uniform({out_ch, in_ch, k, k}, in_ch * k * k, out_ch * k * k, rng),
                     true)),
        b_(Var::leaf(Tensor({out_ch}), true)) {
    add_param("w", &w_);
    add_param("b", &b_);
  }

  Var forward(const Var& x) const { return ops::conv2d(x, w_, b_, pad_); }

  std::int64_t pad_;
  Var w_, b_;
};

class Linear : public Module {
 public:
  Linear(std::int64_t in_dim, std::int64_t out_dim, RngStream& rng)
      : w_(Var::leaf(glorot_uniform({out_dim, in_dim}, in_dim, out_dim, rng), true)),
        b_(Var::leaf(Tensor({out_dim}), true)) {
    add_param("w", &w_);
    add_param("b", &b_);
  }

  Var forward(const Var& x) const { return ops::linear(x, w_, b_); }

  Var w_, b_;
};

class Embedding : public Module {
 public:
  Embedding(std::int64_t rows, std::int64_t dim, RngStream& rng)
      : table_(Var::leaf(glorot_uniform({rows, dim}, dim, dim, rng), true)) {
    add_param("table", &table_);
  }

  Var forward(const std::vector<std::int64_t>& idx) const {
    return ops::rows_select(table_, idx);
  }

  Var table_;
};

namespace detail {

struct BatchStats {
  Var mean;   // [C]
  Var denom;  // [C], sigma + eps
};

// Per-channel standardization statistics over batch and spatial axes,
// using population variance and the (sigma + eps) denominator convention.
// In training mode the running buffers are refreshed as a side effect.
inline BatchStats channel_stats(const Var& x, double eps, double momentum, bool training,
                                Tensor& running_mean, Tensor& running_var) {
  check_contract(x.value().rank() == 4, "channel_stats: expected [N,C,H,W]");
  if (training) {
    const std::int64_t n = x.value().dim(0), h = x.value().dim(2), w = x.value().dim(3);
    Var mu = ops::channel_mean(x);
    Var xc = ops::sub(x, ops::broadcast_channel(mu, n, h, w));
    Var var = ops::channel_mean(ops::mul(xc, xc));
    for (std::int64_t c = 0; c < running_mean.numel(); ++c) {
      running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mu.value()[c];
      running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var.value()[c];
    }
    return {mu, ops::affine(ops::sqrt(var), 1.0, eps)};
  }
  Tensor sigma(running_var.shape());
  for (std::int64_t c = 0; c < sigma.numel(); ++c)
    sigma[c] = std::sqrt(std::max(running_var[c], 0.0)) + eps;
  return {ops::constant(running_mean), ops::constant(sigma)};
}

}  // namespace detail

class BatchNorm2d : public Module {
 public:
  explicit BatchNorm2d(std::int64_t ch, double eps = 1e-5, double momentum = 0.1)
      : eps_(eps),
        momentum_(momentum),
        gamma_(Var::leaf(Tensor::ones({ch}), true)),
        beta_(Var::leaf(Tensor({ch}), true)),
        running_mean_({ch}),
        running_var_(Tensor::ones({ch})) {
    add_param("gamma", &gamma_);
    add_param("beta", &beta_);
    add_buffer("running_mean", &running_mean_);
    add_buffer("running_var", &running_var_);
  }

  Var forward(const Var& x) {
    const std::int64_t n = x.value().dim(0), h = x.value().dim(2), w = x.value().dim(3);
    auto st = detail::channel_stats(x, eps_, momentum_, training(), running_mean_, running_var_);
    Var xhat = ops::div(ops::sub(x, ops::broadcast_channel(st.mean, n, h, w)),
                        ops::broadcast_channel(st.denom, n, h, w));
    return ops::add(ops::mul(xhat, ops::broadcast_channel(gamma_, n, h, w)),
                    ops::broadcast_channel(beta_, n, h, w));
  }

  double eps_, momentum_;
  Var gamma_, beta_;
  Tensor running_mean_, running_var_;
};

// Class-conditional batch normalization: the standardized activation is
// scaled and shifted by per-class rows of learned tables. The selected rows
// are surfaced alongside the output because downstream feature transfer
// consumes them.
class CondBatchNorm2d : public Module {
 public:
  struct Result {
    Var y;
    Var gamma_rows;  // [N,C]
    Var beta_rows;   // [N,C]
  };

  CondBatchNorm2d(std::int64_t num_classes, std::int64_t ch, double eps = 1e-5,
                  double momentum = 0.1)
      : eps_(eps),
        momentum_(momentum),
        gamma_(Var::leaf(Tensor::ones({num_classes, ch}), true)),
        beta_(Var::leaf(Tensor({num_classes, ch}), true)),
        running_mean_({ch}),
        running_var_(Tensor::ones({ch})) {
    add_param("gamma", &gamma_);
    add_param("beta", &beta_);
    add_buffer("running_mean", &running_mean_);
    add_buffer("running_var", &running_var_);
  }

  Result forward_full(const Var& x, const std::vector<std::int64_t>& labels) {
    const std::int64_t n = x.value().dim(0), h = x.value().dim(2), w = x.value().dim(3);
    check_contract(static_cast<std::int64_t>(labels.size()) == n,
                   "CondBatchNorm2d: label count mismatch");
    auto st = detail::channel_stats(x, eps_, momentum_, training(), running_mean_, running_var_);
    Var xhat = ops::div(ops::sub(x, ops::broadcast_channel(st.mean, n, h, w)),
                        ops::broadcast_channel(st.denom, n, h, w));
    Var g = ops::rows_select(gamma_, labels);
    Var b = ops::rows_select(beta_, labels);
    Var y = ops::add(ops::mul(xhat, ops::spatial_broadcast(g, h, w)),
                     ops::spatial_broadcast(b, h, w));
    return {y, g, b};
  }

  Var forward(const Var& x, const std::vector<std::int64_t>& labels) {
    return forward_full(x, labels).y;
  }

  double eps_, momentum_;
  Var gamma_, beta_;
  Tensor running_mean_, running_var_;
};

}  // namespace ctfgan::nn
