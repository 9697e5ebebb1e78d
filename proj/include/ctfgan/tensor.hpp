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

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ctfgan/errors.hpp"

namespace ctfgan {

using Shape = std::vector<std::int64_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major double tensor. The single value type of the library:
// desk-scale models are small enough that double keeps every tolerance
// budget trivial.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(count(shape_)), 0.0);
  }

  Tensor(Shape shape, std::vector<double> values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    check_contract(static_cast<std::int64_t>(data_.size()) == count(shape_),
                   "tensor: value count does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  int rank() const { return static_cast<int>(shape_.size()); }
  const Shape& shape() const { return shape_; }
  std::int64_t dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  bool defined() const { return !shape_.empty() || !data_.empty(); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  double& at2(std::int64_t i, std::int64_t j) {
    assert(rank() == 2);
    return data_[static_cast<std::size_t>(i * shape_[1] + j)];
  }
  double at2(std::int64_t i, std::int64_t j) const {
    assert(rank() == 2);
    return data_[static_cast<std::size_t>(i * shape_[1] + j)];
  }
  double& at3(std::int64_t i, std::int64_t j, std::int64_t k) {
    assert(rank() == 3);
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  double at3(std::int64_t i, std::int64_t j, std::int64_t k) const {
    assert(rank() == 3);
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  double& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    assert(rank() == 4);
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  double at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    assert(rank() == 4);
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }

  Tensor reshaped(Shape shape) const {
    check_contract(count(shape) == numel(),
                   "reshape: element count mismatch " + shape_str(shape_) + " -> " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::fabs(v));
    return m;
  }

  double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

  double frobenius() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
  }

  static std::int64_t count(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) {
      check_contract(d >= 0, "tensor: negative dimension in shape " + shape_str(s));
      n *= d;
    }
    return n;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  check_contract(a.same_shape(b), "max_abs_diff: shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

inline Tensor map_tensor(const Tensor& x, const std::function<double(double)>& f) {
  Tensor y(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = f(x[i]);
  return y;
}

}  // namespace ctfgan
