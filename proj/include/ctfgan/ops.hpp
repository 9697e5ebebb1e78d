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
#include <cmath>
#include <cstring>
#include <vector>

#include "ctfgan/autograd.hpp"
#include "ctfgan/spectral.hpp"
#include "ctfgan/tensor.hpp"

// Differentiable op library. Each op validates shapes, computes the forward
// value, and registers a backward closure that reads values back off the
// node (self.inputs[k]->value), so closures capture only op parameters.
namespace ctfgan::ops {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

template <class F>
inline void accumulate_fn(const NodePtr& n, const F& per_element) {
  if (!n->requires_grad) return;
  Tensor& slot = n->ensure_grad();
  for (std::int64_t i = 0; i < slot.numel(); ++i) slot[i] += per_element(i);
}

inline Var constant(Tensor t) { return Var::leaf(std::move(t), false); }

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  check_contract(a.value().same_shape(b.value()), "add: shape mismatch");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_op("add", std::move(out), {a, b}, [](Node& self) {
    accumulate_fn(self.inputs[0], [&](std::int64_t i) { return self.grad[i]; });
    accumulate_fn(self.inputs[1], [&](std::int64_t i) { return self.grad[i]; });
  });
}

inline Var sub(const Var& a, const Var& b) {
  check_contract(a.value().same_shape(b.value()), "sub: shape mismatch");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_op("sub", std::move(out), {a, b}, [](Node& self) {
    accumulate_fn(self.inputs[0], [&](std::int64_t i) { return self.grad[i]; });
    accumulate_fn(self.inputs[1], [&](std::int64_t i) { return -self.grad[i]; });
  });
}

inline Var mul(const Var& a, const Var& b) {
  check_contract(a.value().same_shape(b.value()), "mul: shape mismatch");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_op("mul", std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    accumulate_fn(self.inputs[0], [&](std::int64_t i) { return self.grad[i] * bv[i]; });
    accumulate_fn(self.inputs[1], [&](std::int64_t i) { return self.grad[i] * av[i]; });
  });
}

inline Var div(const Var& a, const Var& b) {
  check_contract(a.value().same_shape(b.value()), "div: shape mismatch");
  Tensor out(a.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] / b.value()[i];
  return make_op("div", std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    accumulate_fn(self.inputs[0], [&](std::int64_t i) { return self.grad[i] / bv[i]; });
    accumulate_fn(self.inputs[1],
                  [&](std::int64_t i) { return -self.grad[i] * av[i] / (bv[i] * bv[i]); });
  });
}

// s * x + t with scalar constants.
inline Var affine(const Var& x, double s, double t) {
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = s * x.value()[i] + t;
  return make_op("affine", std::move(out), {x}, [s](Node& self) {
    accumulate_fn(self.inputs[0], [&](std::int64_t i) { return s * self.grad[i]; });
  });
}

inline Var scale(const Var& x, double s) { return affine(x, s, 0.0); }
inline Var neg(const Var& x) { return affine(x, -1.0, 0.0); }

inline Var relu(const Var& x) {
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = x.value()[i] > 0.0 ? x.value()[i] : 0.0;
  return make_op("relu", std::move(out), {x}, [](Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    accumulate_fn(self.inputs[0],
                  [&](std::int64_t i) { return xv[i] > 0.0 ? self.grad[i] : 0.0; });
  });
}

inline Var tanh(const Var& x) {
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(x.value()[i]);
  return make_op("tanh", std::move(out), {x}, [](Node& self) {
    const Tensor& y = self.value;
    accumulate_fn(self.inputs[0],
                  [&](std::int64_t i) { return self.grad[i] * (1.0 - y[i] * y[i]); });
  });
}

inline Var sigmoid(const Var& x) {
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x.value()[i]));
  return make_op("sigmoid", std::move(out), {x}, [](Node& self) {
    const Tensor& y = self.value;
    accumulate_fn(self.inputs[0],
                  [&](std::int64_t i) { return self.grad[i] * y[i] * (1.0 - y[i]); });
  });
}

// Elementwise square root. The derivative at exactly zero is taken as zero
// (subgradient choice for the degenerate zero-variance channel).
inline Var sqrt(const Var& x) {
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::sqrt(x.value()[i]);
  return make_op("sqrt", std::move(out), {x}, [](Node& self) {
    const Tensor& y = self.value;
    accumulate_fn(self.inputs[0], [&](std::int64_t i) {
      return y[i] > 0.0 ? self.grad[i] * 0.5 / y[i] : 0.0;
    });
  });
}

// Smooth-L1 against a constant target, elementwise: 0.5*d^2 for |d| < 1,
// |d| - 0.5 otherwise.
inline Var smooth_l1(const Var& pred, const Tensor& target) {
  check_contract(pred.value().same_shape(target), "smooth_l1: shape mismatch");
  Tensor out(pred.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    const double d = pred.value()[i] - target[i];
    out[i] = std::fabs(d) < 1.0 ? 0.5 * d * d : std::fabs(d) - 0.5;
  }
  return make_op("smooth_l1", std::move(out), {pred}, [target](Node& self) {
    const Tensor& p = self.inputs[0]->value;
    accumulate_fn(self.inputs[0], [&](std::int64_t i) {
      const double d = p[i] - target[i];
      const double dphi = std::fabs(d) < 1.0 ? d : (d > 0.0 ? 1.0 : -1.0);
      return self.grad[i] * dphi;
    });
  });
}

// ---------------------------------------------------------------------------
// Reductions and broadcasts
// ---------------------------------------------------------------------------

inline Var sum_all(const Var& x) {
  Tensor out = Tensor::scalar(x.value().sum());
  return make_op("sum_all", std::move(out), {x}, [](Node& self) {
    const double g = self.grad[0];
    accumulate_fn(self.inputs[0], [&](std::int64_t) { return g; });
  });
}

inline Var mean_all(const Var& x) {
  check_contract(x.numel() > 0, "mean_all: empty tensor");
  const double inv = 1.0 / static_cast<double>(x.numel());
  Tensor out = Tensor::scalar(x.value().sum() * inv);
  return make_op("mean_all", std::move(out), {x}, [inv](Node& self) {
    const double g = self.grad[0] * inv;
    accumulate_fn(self.inputs[0], [&](std::int64_t) { return g; });
  });
}

// Per-channel mean over batch and spatial axes: [N,C,H,W] -> [C].
inline Var channel_mean(const Var& x) {
  check_contract(x.value().rank() == 4, "channel_mean: expected [N,C,H,W]");
  const std::int64_t n = x.value().dim(0), c = x.value().dim(1);
  const std::int64_t hw = x.value().dim(2) * x.value().dim(3);
  const double inv = 1.0 / static_cast<double>(n * hw);
  Tensor out({c});
  const double* xd = x.value().data();
  for (std::int64_t in = 0; in < n; ++in)
    for (std::int64_t ic = 0; ic < c; ++ic) {
      const double* p = xd + (in * c + ic) * hw;
      double s = 0.0;
      for (std::int64_t k = 0; k < hw; ++k) s += p[k];
      out[ic] += s;
    }
  for (std::int64_t ic = 0; ic < c; ++ic) out[ic] *= inv;
  return make_op("channel_mean", std::move(out), {x}, [n, c, hw, inv](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& gx = self.inputs[0]->ensure_grad();
    for (std::int64_t in = 0; in < n; ++in)
      for (std::int64_t ic = 0; ic < c; ++ic) {
        const double g = self.grad[ic] * inv;
        double* p = gx.data() + (in * c + ic) * hw;
        for (std::int64_t k = 0; k < hw; ++k) p[k] += g;
      }
  });
}

// [C] -> [N,C,H,W].
inline Var broadcast_channel(const Var& v, std::int64_t n, std::int64_t h, std::int64_t w) {
  check_contract(v.value().rank() == 1, "broadcast_channel: expected [C]");
  const std::int64_t c = v.value().dim(0), hw = h * w;
  Tensor out({n, c, h, w});
  for (std::int64_t in = 0; in < n; ++in)
    for (std::int64_t ic = 0; ic < c; ++ic) {
      double* p = out.data() + (in * c + ic) * hw;
      const double val = v.value()[ic];
      for (std::int64_t k = 0; k < hw; ++k) p[k] = val;
    }
  return make_op("broadcast_channel", std::move(out), {v}, [n, c, hw](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& gv = self.inputs[0]->ensure_grad();
    for (std::int64_t in = 0; in < n; ++in)
      for (std::int64_t ic = 0; ic < c; ++ic) {
        const double* p = self.grad.data() + (in * c + ic) * hw;
        double s = 0.0;
        for (std::int64_t k = 0; k < hw; ++k) s += p[k];
        gv[ic] += s;
      }
  });
}

// Per-sample vectors to constant spatial maps: [N,C] -> [N,C,H,W].
inline Var spatial_broadcast(const Var& v, std::int64_t h, std::int64_t w) {
  check_contract(v.value().rank() == 2, "spatial_broadcast: expected [N,C]");
  const std::int64_t n = v.value().dim(0), c = v.value().dim(1), hw = h * w;
  Tensor out({n, c, h, w});
  for (std::int64_t i = 0; i < n * c; ++i) {
    double* p = out.data() + i * hw;
    const double val = v.value()[i];
    for (std::int64_t k = 0; k < hw; ++k) p[k] = val;
  }
  return make_op("spatial_broadcast", std::move(out), {v}, [n, c, hw](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& gv = self.inputs[0]->ensure_grad();
    for (std::int64_t i = 0; i < n * c; ++i) {
      const double* p = self.grad.data() + i * hw;
      double s = 0.0;
      for (std::int64_t k = 0; k < hw; ++k) s += p[k];
      gv[i] += s;
    }
  });
}

// [N,C,H,W] -> [N,C], summing the spatial axes.
inline Var spatial_sum(const Var& x) {
  check_contract(x.value().rank() == 4, "spatial_sum: expected [N,C,H,W]");
  const std::int64_t nc = x.value().dim(0) * x.value().dim(1);
  const std::int64_t hw = x.value().dim(2) * x.value().dim(3);
  Tensor out({x.value().dim(0), x.value().dim(1)});
  for (std::int64_t i = 0; i < nc; ++i) {
    const double* p = x.value().data() + i * hw;
    double s = 0.0;
    for (std::int64_t k = 0; k < hw; ++k) s += p[k];
    out[i] = s;
  }
  return make_op("spatial_sum", std::move(out), {x}, [nc, hw](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& gx = self.inputs[0]->ensure_grad();
    for (std::int64_t i = 0; i < nc; ++i) {
      const double g = self.grad[i];
      double* p = gx.data() + i * hw;
      for (std::int64_t k = 0; k < hw; ++k) p[k] += g;
    }
  });
}

// [N,D] -> [N].
inline Var sum_dim1(const Var& x) {
  check_contract(x.value().rank() == 2, "sum_dim1: expected [N,D]");
  const std::int64_t n = x.value().dim(0), d = x.value().dim(1);
  Tensor out({n});
  for (std::int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::int64_t j = 0; j < d; ++j) s += x.value()[i * d + j];
    out[i] = s;
  }
  return make_op("sum_dim1", std::move(out), {x}, [n, d](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& gx = self.inputs[0]->ensure_grad();
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < d; ++j) gx[i * d + j] += self.grad[i];
  });
}

// Mean over dim 1 keeping it: [N,S,H,W] -> [N,1,H,W].
inline Var mean_dim1_keep(const Var& x) {
  check_contract(x.value().rank() == 4, "mean_dim1_keep: expected [N,S,H,W]");
  const std::int64_t n = x.value().dim(0), s = x.value().dim(1);
  const std::int64_t hw = x.value().dim(2) * x.value().dim(3);
  check_contract(s >= 1, "mean_dim1_keep: empty stack");
  const double inv = 1.0 / static_cast<double>(s);
  Tensor out({n, 1, x.value().dim(2), x.value().dim(3)});
  for (std::int64_t in = 0; in < n; ++in)
    for (std::int64_t is = 0; is < s; ++is) {
      const double* p = x.value().data() + (in * s + is) * hw;
      double* o = out.data() + in * hw;
      for (std::int64_t k = 0; k < hw; ++k) o[k] += p[k] * inv;
    }
  return make_op("mean_dim1_keep", std::move(out), {x}, [n, s, hw, inv](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& gx = self.inputs[0]->ensure_grad();
    for (std::int64_t in = 0; in < n; ++in)
      for (std::int64_t is = 0; is < s; ++is) {
        double* p = gx.data() + (in * s + is) * hw;
        const double* g = self.grad.data() + in * hw;
        for (std::int64_t k = 0; k < hw; ++k) p[k] += g[k] * inv;
      }
  });
}

// [N,1,H,W] -> [N,C,H,W].
inline Var broadcast_dim1(const Var& x, std::int64_t c) {
  check_contract(x.value().rank() == 4 && x.value().dim(1) == 1,
                 "broadcast_dim1: expected [N,1,H,W]");
  const std::int64_t n = x.value().dim(0);
  const std::int64_t hw = x.value().dim(2) * x.value().dim(3);
  Tensor out({n, c, x.value().dim(2), x.value().dim(3)});
  for (std::int64_t in = 0; in < n; ++in)
    for (std::int64_t ic = 0; ic < c; ++ic)
      std::memcpy(out.data() + (in * c + ic) * hw, x.value().data() + in * hw,
                  sizeof(double) * static_cast<std::size_t>(hw));
  return make_op("broadcast_dim1", std::move(out), {x}, [n, c, hw](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& gx = self.inputs[0]->ensure_grad();
    for (std::int64_t in = 0; in < n; ++in)
      for (std::int64_t ic = 0; ic < c; ++ic) {
        const double* g = self.grad.data() + (in * c + ic) * hw;
        double* p = gx.data() + in * hw;
        for (std::int64_t k = 0; k < hw; ++k) p[k] += g[k];
      }
  });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(shape);
  return make_op("reshape", std::move(out), {x}, [](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    accumulate(self.inputs[0], self.grad.reshaped(self.inputs[0]->value.shape()));
  });
}

// Concatenate along dim 1 for rank-2 or rank-4 tensors.
inline Var concat_dim1(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  check_contract(av.rank() == bv.rank() && (av.rank() == 2 || av.rank() == 4),
                 "concat_dim1: expected matching rank-2 or rank-4 tensors");
  check_contract(av.dim(0) == bv.dim(0), "concat_dim1: batch mismatch");
  std::int64_t inner_a = 1, inner_b = 1;
  Shape out_shape = av.shape();
  out_shape[1] = av.dim(1) + bv.dim(1);
  if (av.rank() == 4) {
    check_contract(av.dim(2) == bv.dim(2) && av.dim(3) == bv.dim(3),
                   "concat_dim1: spatial mismatch");
    inner_a = av.dim(2) * av.dim(3);
    inner_b = inner_a;
  }
  const std::int64_t n = av.dim(0);
  const std::int64_t ra = av.dim(1) * inner_a;  // per-sample row sizes
  const std::int64_t rb = bv.dim(1) * inner_b;
  Tensor out(out_shape);
  for (std::int64_t i = 0; i < n; ++i) {
    std::memcpy(out.data() + i * (ra + rb), av.data() + i * ra,
                sizeof(double) * static_cast<std::size_t>(ra));
    std::memcpy(out.data() + i * (ra + rb) + ra, bv.data() + i * rb,
                sizeof(double) * static_cast<std::size_t>(rb));
  }
  return make_op("concat_dim1", std::move(out), {a, b}, [n, ra, rb](Node& self) {
    if (self.inputs[0]->requires_grad) {
      Tensor& ga = self.inputs[0]->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t k = 0; k < ra; ++k) ga[i * ra + k] += self.grad[i * (ra + rb) + k];
    }
    if (self.inputs[1]->requires_grad) {
      Tensor& gb = self.inputs[1]->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t k = 0; k < rb; ++k) gb[i * rb + k] += self.grad[i * (ra + rb) + ra + k];
    }
  });
}

// Channel slice [c0, c1) of a [N,C,H,W] tensor.
inline Var slice_channels(const Var& x, std::int64_t c0, std::int64_t c1) {
  const Tensor& xv = x.value();
  check_contract(xv.rank() == 4, "slice_channels: expected [N,C,H,W]");
  check_contract(0 <= c0 && c0 < c1 && c1 <= xv.dim(1), "slice_channels: bad channel range");
  const std::int64_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  const std::int64_t cs = c1 - c0;
  Tensor out({n, cs, xv.dim(2), xv.dim(3)});
  for (std::int64_t i = 0; i < n; ++i)
    std::memcpy(out.data() + i * cs * hw, xv.data() + (i * c + c0) * hw,
                sizeof(double) * static_cast<std::size_t>(cs * hw));
  return make_op("slice_channels", std::move(out), {x}, [n, c, c0, cs, hw](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& gx = self.inputs[0]->ensure_grad();
    for (std::int64_t i = 0; i < n; ++i) {
      const double* g = self.grad.data() + i * cs * hw;
      double* p = gx.data() + (i * c + c0) * hw;
      for (std::int64_t k = 0; k < cs * hw; ++k) p[k] += g[k];
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  check_contract(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
                 "matmul: incompatible shapes " + shape_str(av.shape()) + " x " +
                     shape_str(bv.shape()));
  Tensor out({av.dim(0), bv.dim(1)});
  EMap(out.data(), out.dim(0), out.dim(1)).noalias() =
      ECMap(av.data(), av.dim(0), av.dim(1)) * ECMap(bv.data(), bv.dim(0), bv.dim(1));
  return make_op("matmul", std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    ECMap g(self.grad.data(), self.grad.dim(0), self.grad.dim(1));
    if (self.inputs[0]->requires_grad) {
      Tensor& ga = self.inputs[0]->ensure_grad();
      EMap(ga.data(), ga.dim(0), ga.dim(1)).noalias() +=
          g * ECMap(bv.data(), bv.dim(0), bv.dim(1)).transpose();
    }
    if (self.inputs[1]->requires_grad) {
      Tensor& gb = self.inputs[1]->ensure_grad();
      EMap(gb.data(), gb.dim(0), gb.dim(1)).noalias() +=
          ECMap(av.data(), av.dim(0), av.dim(1)).transpose() * g;
    }
  });
}

// x [N,K] * w^T [K,O] + b -> [N,O].
inline Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  check_contract(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(1),
                 "linear: incompatible shapes");
  check_contract(b.value().rank() == 1 && b.value().dim(0) == wv.dim(0), "linear: bad bias");
  const std::int64_t n = xv.dim(0), o = wv.dim(0);
  Tensor out({n, o});
  EMap om(out.data(), n, o);
  om.noalias() = ECMap(xv.data(), n, xv.dim(1)) * ECMap(wv.data(), o, wv.dim(1)).transpose();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < o; ++j) out[i * o + j] += b.value()[j];
  return make_op("linear", std::move(out), {x, w, b}, [n, o](Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    const Tensor& wv = self.inputs[1]->value;
    ECMap g(self.grad.data(), n, o);
    if (self.inputs[0]->requires_grad) {
      Tensor& gx = self.inputs[0]->ensure_grad();
      EMap(gx.data(), n, xv.dim(1)).noalias() += g * ECMap(wv.data(), o, wv.dim(1));
    }
    if (self.inputs[1]->requires_grad) {
      Tensor& gw = self.inputs[1]->ensure_grad();
      EMap(gw.data(), o, wv.dim(1)).noalias() +=
          g.transpose() * ECMap(xv.data(), n, xv.dim(1));
    }
    if (self.inputs[2]->requires_grad) {
      Tensor& gb = self.inputs[2]->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < o; ++j) gb[j] += self.grad[i * o + j];
    }
  });
}

// Gather rows of a table: [R,C] x idx[N] -> [N,C]. Gradient scatter-adds
// into exactly the selected rows.
inline Var rows_select(const Var& table, std::vector<std::int64_t> idx) {
  const Tensor& tv = table.value();
  check_contract(tv.rank() == 2, "rows_select: expected [R,C] table");
  const std::int64_t r = tv.dim(0), c = tv.dim(1);
  for (auto i : idx)
    check_label(i >= 0 && i < r, "rows_select: label " + std::to_string(i) +
                                     " outside [0," + std::to_string(r) + ")");
  const auto n = static_cast<std::int64_t>(idx.size());
  Tensor out({n, c});
  for (std::int64_t i = 0; i < n; ++i)
    std::memcpy(out.data() + i * c, tv.data() + idx[static_cast<std::size_t>(i)] * c,
                sizeof(double) * static_cast<std::size_t>(c));
  return make_op("rows_select", std::move(out), {table}, [idx, c](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& gt = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const double* g = self.grad.data() + static_cast<std::int64_t>(i) * c;
      double* p = gt.data() + idx[i] * c;
      for (std::int64_t k = 0; k < c; ++k) p[k] += g[k];
    }
  });
}

// Multiply / divide a tensor by a scalar Var (shape [1]).
inline Var mul_scalar_var(const Var& x, const Var& s) {
  check_contract(s.numel() == 1, "mul_scalar_var: scalar expected");
  const double sv = s.value()[0];
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = x.value()[i] * sv;
  return make_op("mul_scalar_var", std::move(out), {x, s}, [](Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    const double sv = self.inputs[1]->value[0];
    accumulate_fn(self.inputs[0], [&](std::int64_t i) { return self.grad[i] * sv; });
    if (self.inputs[1]->requires_grad) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < xv.numel(); ++i) acc += self.grad[i] * xv[i];
      self.inputs[1]->ensure_grad()[0] += acc;
    }
  });
}

inline Var div_scalar_var(const Var& x, const Var& s) {
  check_contract(s.numel() == 1, "div_scalar_var: scalar expected");
  const double sv = s.value()[0];
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = x.value()[i] / sv;
  return make_op("div_scalar_var", std::move(out), {x, s}, [](Node& self) {
    const Tensor& xv = self.inputs[0]->value;
    const double sv = self.inputs[1]->value[0];
    accumulate_fn(self.inputs[0], [&](std::int64_t i) { return self.grad[i] / sv; });
    if (self.inputs[1]->requires_grad) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < xv.numel(); ++i) acc += self.grad[i] * xv[i];
      self.inputs[1]->ensure_grad()[0] += -acc / (sv * sv);
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution and resampling
// ---------------------------------------------------------------------------

namespace detail {

inline void im2col(const double* x, std::int64_t ci, std::int64_t h, std::int64_t w,
                   std::int64_t kh, std::int64_t kw, std::int64_t pad, std::int64_t ho,
                   std::int64_t wo, double* cols) {
  // cols laid out [ci*kh*kw, ho*wo] row-major.
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < ci; ++c)
    for (std::int64_t ki = 0; ki < kh; ++ki)
      for (std::int64_t kj = 0; kj < kw; ++kj, ++row) {
        double* out = cols + row * ho * wo;
        const double* plane = x + c * h * w;
        for (std::int64_t i = 0; i < ho; ++i) {
          const std::int64_t si = i + ki - pad;
          if (si < 0 || si >= h) {
            for (std::int64_t j = 0; j < wo; ++j) out[i * wo + j] = 0.0;
            continue;
          }
          for (std::int64_t j = 0; j < wo; ++j) {
            const std::int64_t sj = j + kj - pad;
            out[i * wo + j] = (sj >= 0 && sj < w) ? plane[si * w + sj] : 0.0;
          }
        }
      }
}

inline void col2im_add(const double* cols, std::int64_t ci, std::int64_t h, std::int64_t w,
                       std::int64_t kh, std::int64_t kw, std::int64_t pad, std::int64_t ho,
                       std::int64_t wo, double* x) {
  std::int64_t row = 0;
  for (std::int64_t c = 0; c < ci; ++c)
    for (std::int64_t ki = 0; ki < kh; ++ki)
      for (std::int64_t kj = 0; kj < kw; ++kj, ++row) {
        const double* in = cols + row * ho * wo;
        double* plane = x + c * h * w;
        for (std::int64_t i = 0; i < ho; ++i) {
          const std::int64_t si = i + ki - pad;
          if (si < 0 || si >= h) continue;
          for (std::int64_t j = 0; j < wo; ++j) {
            const std::int64_t sj = j + kj - pad;
            if (sj >= 0 && sj < w) plane[si * w + sj] += in[i * wo + j];
          }
        }
      }
}

}  // namespace detail

// Stride-1 2-D convolution with zero padding, im2col + GEMM per sample.
inline Var conv2d(const Var& x, const Var& w, const Var& b, std::int64_t pad) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  check_contract(xv.rank() == 4, "conv2d: input must be [N,C,H,W]");
  check_contract(wv.rank() == 4, "conv2d: weight must be [Co,Ci,kh,kw]");
  check_contract(xv.dim(1) == wv.dim(1), "conv2d: channel mismatch");
  const std::int64_t n = xv.dim(0), ci = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  const std::int64_t co = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
  const std::int64_t ho = h + 2 * pad - kh + 1, wo = wd + 2 * pad - kw + 1;
  check_contract(ho >= 1 && wo >= 1, "conv2d: kernel larger than padded input");
  check_contract(b.value().rank() == 1 && b.value().dim(0) == co, "conv2d: bad bias");
  const std::int64_t krows = ci * kh * kw;

  Tensor out({n, co, ho, wo});
  std::vector<double> cols(static_cast<std::size_t>(krows * ho * wo));
  ECMap wm(wv.data(), co, krows);
  for (std::int64_t i = 0; i < n; ++i) {
    detail::im2col(xv.data() + i * ci * h * wd, ci, h, wd, kh, kw, pad, ho, wo, cols.data());
    EMap om(out.data() + i * co * ho * wo, co, ho * wo);
    om.noalias() = wm * ECMap(cols.data(), krows, ho * wo);
  }
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t c = 0; c < co; ++c) {
      double* p = out.data() + (i * co + c) * ho * wo;
      const double bias = b.value()[c];
      for (std::int64_t k = 0; k < ho * wo; ++k) p[k] += bias;
    }

  const std::int64_t params[] = {n, ci, h, wd, co, kh, kw, pad, ho, wo, krows};
  std::vector<std::int64_t> ps(params, params + 11);
  return make_op("conv2d", std::move(out), {x, w, b}, [ps](Node& self) {
    const std::int64_t n = ps[0], ci = ps[1], h = ps[2], wd = ps[3], co = ps[4], kh = ps[5],
                       kw = ps[6], pad = ps[7], ho = ps[8], wo = ps[9], krows = ps[10];
    const Tensor& xv = self.inputs[0]->value;
    const Tensor& wv = self.inputs[1]->value;
    const bool need_x = self.inputs[0]->requires_grad;
    const bool need_w = self.inputs[1]->requires_grad;
    const bool need_b = self.inputs[2]->requires_grad;
    std::vector<double> cols(static_cast<std::size_t>(krows * ho * wo));
    std::vector<double> gcols(need_x ? cols.size() : 0);
    ECMap wm(wv.data(), co, krows);
    for (std::int64_t i = 0; i < n; ++i) {
      ECMap g(self.grad.data() + i * co * ho * wo, co, ho * wo);
      if (need_w) {
        detail::im2col(xv.data() + i * ci * h * wd, ci, h, wd, kh, kw, pad, ho, wo, cols.data());
        Tensor& gw = self.inputs[1]->ensure_grad();
        EMap(gw.data(), co, krows).noalias() +=
            g * ECMap(cols.data(), krows, ho * wo).transpose();
      }
      if (need_x) {
        EMap(gcols.data(), krows, ho * wo).noalias() = wm.transpose() * g;
        Tensor& gx = self.inputs[0]->ensure_grad();
        detail::col2im_add(gcols.data(), ci, h, wd, kh, kw, pad, ho, wo,
                           gx.data() + i * ci * h * wd);
      }
    }
    if (need_b) {
      Tensor& gb = self.inputs[2]->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t c = 0; c < co; ++c) {
          const double* p = self.grad.data() + (i * co + c) * ho * wo;
          double s = 0.0;
          for (std::int64_t k = 0; k < ho * wo; ++k) s += p[k];
          gb[c] += s;
        }
    }
  });
}

inline Var avg_pool2x2(const Var& x) {
  const Tensor& xv = x.value();
  check_contract(xv.rank() == 4, "avg_pool2x2: expected [N,C,H,W]");
  check_contract(xv.dim(2) % 2 == 0 && xv.dim(3) % 2 == 0, "avg_pool2x2: odd resolution");
  const std::int64_t nc = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::int64_t oh = h / 2, ow = w / 2;
  Tensor out({xv.dim(0), xv.dim(1), oh, ow});
  for (std::int64_t i = 0; i < nc; ++i) {
    const double* p = xv.data() + i * h * w;
    double* o = out.data() + i * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t xo = 0; xo < ow; ++xo)
        o[y * ow + xo] = 0.25 * (p[(2 * y) * w + 2 * xo] + p[(2 * y) * w + 2 * xo + 1] +
                                 p[(2 * y + 1) * w + 2 * xo] + p[(2 * y + 1) * w + 2 * xo + 1]);
  }
  return make_op("avg_pool2x2", std::move(out), {x}, [nc, h, w, oh, ow](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& gx = self.inputs[0]->ensure_grad();
    for (std::int64_t i = 0; i < nc; ++i) {
      const double* g = self.grad.data() + i * oh * ow;
      double* p = gx.data() + i * h * w;
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t xo = 0; xo < ow; ++xo) {
          const double v = 0.25 * g[y * ow + xo];
          p[(2 * y) * w + 2 * xo] += v;
          p[(2 * y) * w + 2 * xo + 1] += v;
          p[(2 * y + 1) * w + 2 * xo] += v;
          p[(2 * y + 1) * w + 2 * xo + 1] += v;
        }
    }
  });
}

inline Var upsample_nearest2x(const Var& x) {
  const Tensor& xv = x.value();
  check_contract(xv.rank() == 4, "upsample_nearest2x: expected [N,C,H,W]");
  const std::int64_t nc = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  Tensor out({xv.dim(0), xv.dim(1), 2 * h, 2 * w});
  for (std::int64_t i = 0; i < nc; ++i) {
    const double* p = xv.data() + i * h * w;
    double* o = out.data() + i * 4 * h * w;
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t xo = 0; xo < w; ++xo) {
        const double v = p[y * w + xo];
        o[(2 * y) * 2 * w + 2 * xo] = v;
        o[(2 * y) * 2 * w + 2 * xo + 1] = v;
        o[(2 * y + 1) * 2 * w + 2 * xo] = v;
        o[(2 * y + 1) * 2 * w + 2 * xo + 1] = v;
      }
  }
  return make_op("upsample_nearest2x", std::move(out), {x}, [nc, h, w](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& gx = self.inputs[0]->ensure_grad();
    for (std::int64_t i = 0; i < nc; ++i) {
      const double* g = self.grad.data() + i * 4 * h * w;
      double* p = gx.data() + i * h * w;
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t xo = 0; xo < w; ++xo)
          p[y * w + xo] += g[(2 * y) * 2 * w + 2 * xo] + g[(2 * y) * 2 * w + 2 * xo + 1] +
                           g[(2 * y + 1) * 2 * w + 2 * xo] + g[(2 * y + 1) * 2 * w + 2 * xo + 1];
    }
  });
}

// Corner-aligned bilinear upscale on [N,C,H,W]; backward is the adjoint
// scatter with the same interpolation weights.
inline Var bilinear_upscale(const Var& x, std::int64_t th, std::int64_t tw) {
  const Tensor& xv = x.value();
  check_contract(xv.rank() == 4, "bilinear_upscale: expected [N,C,H,W]");
  const std::int64_t nc = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  check_contract(th >= h && tw >= w, "bilinear_upscale: target below source resolution");
  Tensor out({xv.dim(0), xv.dim(1), th, tw});
  std::vector<spectral::BilinearTap> ty(static_cast<std::size_t>(th)),
      tx(static_cast<std::size_t>(tw));
  for (std::int64_t i = 0; i < th; ++i) ty[static_cast<std::size_t>(i)] = spectral::bilinear_tap(i, th, h);
  for (std::int64_t j = 0; j < tw; ++j) tx[static_cast<std::size_t>(j)] = spectral::bilinear_tap(j, tw, w);
  for (std::int64_t i = 0; i < nc; ++i) {
    const double* p = xv.data() + i * h * w;
    double* o = out.data() + i * th * tw;
    for (std::int64_t y = 0; y < th; ++y) {
      const auto& a = ty[static_cast<std::size_t>(y)];
      for (std::int64_t xo = 0; xo < tw; ++xo) {
        const auto& bx = tx[static_cast<std::size_t>(xo)];
        o[y * tw + xo] = (1.0 - a.w_hi) * ((1.0 - bx.w_hi) * p[a.lo * w + bx.lo] +
                                           bx.w_hi * p[a.lo * w + bx.hi]) +
                         a.w_hi * ((1.0 - bx.w_hi) * p[a.hi * w + bx.lo] +
                                   bx.w_hi * p[a.hi * w + bx.hi]);
      }
    }
  }
  return make_op("bilinear_upscale", std::move(out), {x}, [nc, h, w, th, tw, ty, tx](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& gx = self.inputs[0]->ensure_grad();
    for (std::int64_t i = 0; i < nc; ++i) {
      const double* g = self.grad.data() + i * th * tw;
      double* p = gx.data() + i * h * w;
      for (std::int64_t y = 0; y < th; ++y) {
        const auto& a = ty[static_cast<std::size_t>(y)];
        for (std::int64_t xo = 0; xo < tw; ++xo) {
          const auto& bx = tx[static_cast<std::size_t>(xo)];
          const double gv = g[y * tw + xo];
          p[a.lo * w + bx.lo] += (1.0 - a.w_hi) * (1.0 - bx.w_hi) * gv;
          p[a.lo * w + bx.hi] += (1.0 - a.w_hi) * bx.w_hi * gv;
          p[a.hi * w + bx.lo] += a.w_hi * (1.0 - bx.w_hi) * gv;
          p[a.hi * w + bx.hi] += a.w_hi * bx.w_hi * gv;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Spectral ops (orthonormal transforms: the adjoint equals the inverse)
// ---------------------------------------------------------------------------

namespace detail {

inline void dct_planes(const Tensor& x, Tensor& out, bool inverse) {
  const std::int64_t planes = x.numel() / (x.dim(x.rank() - 2) * x.dim(x.rank() - 1));
  const std::int64_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  const auto& ch = spectral::dct_basis(h);
  const auto& cw = spectral::dct_basis(w);
  for (std::int64_t p = 0; p < planes; ++p) {
    ECMap in(x.data() + p * h * w, h, w);
    EMap o(out.data() + p * h * w, h, w);
    if (inverse)
      o.noalias() = ch.transpose() * in * cw;
    else
      o.noalias() = ch * in * cw.transpose();
  }
}

}  // namespace detail

inline Var dct2d(const Var& x) {
  check_contract(x.value().rank() >= 2, "dct2d: rank >= 2 required");
  Tensor out(x.shape());
  detail::dct_planes(x.value(), out, false);
  return make_op("dct2d", std::move(out), {x}, [](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor g(self.grad.shape());
    detail::dct_planes(self.grad, g, true);
    accumulate(self.inputs[0], g);
  });
}

inline Var idct2d(const Var& x) {
  check_contract(x.value().rank() >= 2, "idct2d: rank >= 2 required");
  Tensor out(x.shape());
  detail::dct_planes(x.value(), out, true);
  return make_op("idct2d", std::move(out), {x}, [](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor g(self.grad.shape());
    detail::dct_planes(self.grad, g, false);
    accumulate(self.inputs[0], g);
  });
}

// [N,3,H,W] -> [N,1,H,W] with ITU-R 601 weights.
inline Var to_grayscale(const Var& x) {
  const Tensor& xv = x.value();
  check_contract(xv.rank() == 4 && xv.dim(1) == 3, "to_grayscale: expected [N,3,H,W]");
  const std::int64_t n = xv.dim(0), hw = xv.dim(2) * xv.dim(3);
  Tensor out({n, 1, xv.dim(2), xv.dim(3)});
  for (std::int64_t i = 0; i < n; ++i) {
    const double* r = xv.data() + (i * 3 + 0) * hw;
    const double* g = xv.data() + (i * 3 + 1) * hw;
    const double* b = xv.data() + (i * 3 + 2) * hw;
    double* o = out.data() + i * hw;
    for (std::int64_t k = 0; k < hw; ++k)
      o[k] = spectral::kLumaR * r[k] + spectral::kLumaG * g[k] + spectral::kLumaB * b[k];
  }
  return make_op("to_grayscale", std::move(out), {x}, [n, hw](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    Tensor& gx = self.inputs[0]->ensure_grad();
    for (std::int64_t i = 0; i < n; ++i) {
      const double* g = self.grad.data() + i * hw;
      double* r = gx.data() + (i * 3 + 0) * hw;
      double* gg = gx.data() + (i * 3 + 1) * hw;
      double* b = gx.data() + (i * 3 + 2) * hw;
      for (std::int64_t k = 0; k < hw; ++k) {
        r[k] += spectral::kLumaR * g[k];
        gg[k] += spectral::kLumaG * g[k];
        b[k] += spectral::kLumaB * g[k];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// Per-sample softmax cross-entropy: logits [N,K], labels in [0,K) -> [N].
inline Var softmax_cross_entropy(const Var& logits, std::vector<std::int64_t> labels) {
  const Tensor& lv = logits.value();
  check_contract(lv.rank() == 2, "softmax_cross_entropy: logits must be [N,K]");
  const std::int64_t n = lv.dim(0), k = lv.dim(1);
  check_contract(static_cast<std::int64_t>(labels.size()) == n,
                 "softmax_cross_entropy: label count mismatch");
  for (auto y : labels) check_label(y >= 0 && y < k, "softmax_cross_entropy: label out of range");
  Tensor out({n});
  for (std::int64_t i = 0; i < n; ++i) {
    const double* row = lv.data() + i * k;
    double m = row[0];
    for (std::int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
    double s = 0.0;
    for (std::int64_t j = 0; j < k; ++j) s += std::exp(row[j] - m);
    out[i] = m + std::log(s) - row[labels[static_cast<std::size_t>(i)]];
  }
  return make_op("softmax_ce", std::move(out), {logits}, [labels, k](Node& self) {
    if (!self.inputs[0]->requires_grad) return;
    const Tensor& lv = self.inputs[0]->value;
    Tensor& gx = self.inputs[0]->ensure_grad();
    const std::int64_t n = lv.dim(0);
    for (std::int64_t i = 0; i < n; ++i) {
      const double* row = lv.data() + i * k;
      double m = row[0];
      for (std::int64_t j = 1; j < k; ++j) m = std::max(m, row[j]);
      double s = 0.0;
      for (std::int64_t j = 0; j < k; ++j) s += std::exp(row[j] - m);
      const double gn = self.grad[i];
      for (std::int64_t j = 0; j < k; ++j) {
        const double p = std::exp(row[j] - m) / s;
        gx[i * k + j] += gn * (p - (j == labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0));
      }
    }
  });
}

// Hinge adversarial losses over per-sample score vectors [N].
inline Var hinge_d_loss(const Var& real_scores, const Var& fake_scores) {
  check_contract(real_scores.numel() > 0 && fake_scores.numel() > 0,
                 "hinge_d_loss: empty score batch");
  return add(mean_all(relu(affine(real_scores, -1.0, 1.0))),
             mean_all(relu(affine(fake_scores, 1.0, 1.0))));
}

inline Var hinge_g_loss(const Var& fake_scores) {
  check_contract(fake_scores.numel() > 0, "hinge_g_loss: empty score batch");
  return neg(mean_all(fake_scores));
}

}  // namespace ctfgan::ops
