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

#include <Eigen/Dense>

#include "ctfgan/nn/layers.hpp"
#include "ctfgan/nn/module.hpp"
#include "ctfgan/ops.hpp"
#include "ctfgan/rng.hpp"

namespace ctfgan::nn {

// One power-iteration step on the weight flattened to [dim0, rest], then a
// differentiable division by sigma = u^T W v with u, v held constant. The
// left vector u persists across calls so the estimate warm-starts; it is
// advanced only when update_u is set (training forwards).
inline Var spectrally_normalized(const Var& w, Tensor& u, bool update_u) {
  const Tensor& wv = w.value();
  const std::int64_t rows = wv.dim(0);
  const std::int64_t cols = wv.numel() / rows;
  check_contract(u.numel() == rows, "spectral norm: u buffer size mismatch");

  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> W(
      wv.data(), rows, cols);
  Eigen::Map<Eigen::VectorXd> ub(u.data(), rows);
  Eigen::VectorXd v = W.transpose() * ub;
  v /= v.norm() + 1e-12;
  Eigen::VectorXd u2 = W * v;
  u2 /= u2.norm() + 1e-12;
  if (update_u) ub = u2;

  Tensor vt({cols, 1});
  for (std::int64_t i = 0; i < cols; ++i) vt[i] = v(i);
  Tensor ut({rows, 1});
  for (std::int64_t i = 0; i < rows; ++i) ut[i] = u2(i);

  Var wf = ops::reshape(w, {rows, cols});
  Var wvp = ops::matmul(wf, ops::constant(vt));
  Var sigma = ops::sum_all(ops::mul(wvp, ops::constant(ut)));
  check_numeric(sigma.value()[0] > 0.0, "spectral norm: nonpositive singular value estimate");
  return ops::div_scalar_var(w, sigma);
}

inline Tensor init_sn_u(std::int64_t rows, RngStream& rng) {
  Tensor u = rng.normal_tensor({rows});
  double n = u.frobenius();
  for (std::int64_t i = 0; i < rows; ++i) u[i] /= n + 1e-12;
  return u;
}

class SNConv2d : public Module {
 public:
  SNConv2d(std::int64_t in_ch, std::int64_t out_ch, std::int64_t k, std::int64_t pad,
           RngStream& rng)
      : pad_(pad),
        w_(Var::leaf(glorot_uniform({out_ch, in_ch, k, k}, in_ch * k * k, out_ch * k * k, rng),
                     true)),
        b_(Var::leaf(Tensor({out_ch}), true)),
        u_(init_sn_u(out_ch, rng)) {
    add_param("w", &w_);
    add_param("b", &b_);
    add_buffer("u", &u_);
  }

  Var forward(const Var& x) {
    return ops::conv2d(x, spectrally_normalized(w_, u_, training()), b_, pad_);
  }

  std::int64_t pad_;
  Var w_, b_;
  Tensor u_;
};

class SNLinear : public Module {
 public:
  SNLinear(std::int64_t in_dim, std::int64_t out_dim, RngStream& rng)
      : w_(Var::leaf(glorot_uniform({out_dim, in_dim}, in_dim, out_dim, rng), true)),
        b_(Var::leaf(Tensor({out_dim}), true)),
        u_(init_sn_u(out_dim, rng)) {
    add_param("w", &w_);
    add_param("b", &b_);
    add_buffer("u", &u_);
  }

  Var forward(const Var& x) {
    return ops::linear(x, spectrally_normalized(w_, u_, training()), b_);
  }

  Var w_, b_;
  Tensor u_;
};

class SNEmbedding : public Module {
 public:
  SNEmbedding(std::int64_t rows, std::int64_t dim, RngStream& rng)
      : table_(Var::leaf(glorot_uniform({rows, dim}, dim, dim, rng), true)),
        u_(init_sn_u(rows, rng)) {
    add_param("table", &table_);
    add_buffer("u", &u_);
  }

  Var forward(const std::vector<std::int64_t>& idx) {
    return ops::rows_select(spectrally_normalized(table_, u_, training()), idx);
  }

  Var table_;
  Tensor u_;
};

}  // namespace ctfgan::nn
