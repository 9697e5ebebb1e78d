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
#include <map>
#include <mutex>
#include <vector>

#include "ctfgan/errors.hpp"
#include "ctfgan/tensor.hpp"

// Pure numerical primitives behind the feature-difference pipeline:
// orthonormal 2-D DCT/IDCT, corner-aligned bilinear upscaling, grayscale
// conversion, and the two difference-map formulas built from them.
// Everything here is a deterministic pure function of its inputs.
namespace ctfgan::spectral {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const Mat> as_mat(const Tensor& t) {
  return Eigen::Map<const Mat>(t.data(), t.dim(0), t.dim(1));
}

inline Eigen::Map<Mat> as_mat(Tensor& t) {
  return Eigen::Map<Mat>(t.data(), t.dim(0), t.dim(1));
}

// Orthonormal DCT-II basis: row k holds a_k * cos(pi*(2i+1)*k / 2N) with
// a_0 = sqrt(1/N) and a_k = sqrt(2/N). C * C^T = I, so the inverse
// transform (DCT-III) is the plain transpose and the Frobenius norm is
// preserved exactly.
inline const Mat& dct_basis(std::int64_t n) {
  static std::map<std::int64_t, Mat> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  Mat c(n, n);
  const double pi = 3.14159265358979323846;
  for (std::int64_t k = 0; k < n; ++k) {
    const double a = (k == 0) ? std::sqrt(1.0 / static_cast<double>(n))
                              : std::sqrt(2.0 / static_cast<double>(n));
    for (std::int64_t i = 0; i < n; ++i)
      c(k, i) = a * std::cos(pi * (2.0 * static_cast<double>(i) + 1.0) * static_cast<double>(k) /
                             (2.0 * static_cast<double>(n)));
  }
  return cache.emplace(n, std::move(c)).first->second;
}

inline void require_plane(const Tensor& t, const char* who) {
  check_contract(t.rank() == 2, std::string(who) + ": expected a 2-D map, got rank " +
                                    std::to_string(t.rank()));
  check_contract(t.dim(0) >= 1 && t.dim(1) >= 1,
                 std::string(who) + ": degenerate resolution " + shape_str(t.shape()));
}

// 2-D orthonormal type-II DCT of a spatial map: C_h * X * C_w^T.
inline Tensor dct2d(const Tensor& map) {
  require_plane(map, "dct2d");
  check_numeric(map.all_finite(), "dct2d: non-finite input");
  const auto& ch = dct_basis(map.dim(0));
  const auto& cw = dct_basis(map.dim(1));
  Tensor out(map.shape());
  as_mat(out).noalias() = ch * as_mat(map) * cw.transpose();
  return out;
}

// Exact inverse of dct2d (type-III): C_h^T * Y * C_w.
inline Tensor idct2d(const Tensor& spec) {
  require_plane(spec, "idct2d");
  check_numeric(spec.all_finite(), "idct2d: non-finite input");
  const auto& ch = dct_basis(spec.dim(0));
  const auto& cw = dct_basis(spec.dim(1));
  Tensor out(spec.shape());
  as_mat(out).noalias() = ch.transpose() * as_mat(spec) * cw;
  return out;
}

// Source coordinate for corner-aligned interpolation: endpoints map onto
// endpoints, so corner pixels survive upscaling exactly.
inline double corner_aligned_src(std::int64_t dst, std::int64_t dst_size, std::int64_t src_size) {
  if (dst_size <= 1 || src_size <= 1) return 0.0;
  return static_cast<double>(dst) * static_cast<double>(src_size - 1) /
         static_cast<double>(dst_size - 1);
}

struct BilinearTap {
  std::int64_t lo;
  std::int64_t hi;
  double w_hi;  // weight of hi; lo gets 1 - w_hi
};

inline BilinearTap bilinear_tap(std::int64_t dst, std::int64_t dst_size, std::int64_t src_size) {
  const double s = corner_aligned_src(dst, dst_size, src_size);
  const auto lo = static_cast<std::int64_t>(std::floor(s));
  const std::int64_t hi = std::min(lo + 1, src_size - 1);
  return {lo, hi, s - static_cast<double>(lo)};
}

// Corner-aligned bilinear upscale of a 2-D map. Target must dominate the
// source in both dimensions; equal resolution is the identity.
inline Tensor bilinear_upscale(const Tensor& map, std::int64_t th, std::int64_t tw) {
  require_plane(map, "bilinear_upscale");
  const std::int64_t h = map.dim(0), w = map.dim(1);
  check_contract(th >= h && tw >= w,
                 "bilinear_upscale: target " + shape_str({th, tw}) +
                     " smaller than source " + shape_str({h, w}));
  if (th == h && tw == w) return map;
  Tensor out({th, tw});
  for (std::int64_t i = 0; i < th; ++i) {
    const BilinearTap ty = bilinear_tap(i, th, h);
    for (std::int64_t j = 0; j < tw; ++j) {
      const BilinearTap tx = bilinear_tap(j, tw, w);
      const double v00 = map.at2(ty.lo, tx.lo);
      const double v01 = map.at2(ty.lo, tx.hi);
      const double v10 = map.at2(ty.hi, tx.lo);
      const double v11 = map.at2(ty.hi, tx.hi);
      out.at2(i, j) = (1.0 - ty.w_hi) * ((1.0 - tx.w_hi) * v00 + tx.w_hi * v01) +
                      ty.w_hi * ((1.0 - tx.w_hi) * v10 + tx.w_hi * v11);
    }
  }
  return out;
}

// ITU-R 601 luma weights.
inline constexpr double kLumaR = 0.299;
inline constexpr double kLumaG = 0.587;
inline constexpr double kLumaB = 0.114;

// Collapse a [3,H,W] color stack to a single luminance plane.
inline Tensor to_grayscale(const Tensor& image) {
  check_contract(image.rank() == 3, "to_grayscale: expected [3,H,W], got rank " +
                                        std::to_string(image.rank()));
  check_contract(image.dim(0) == 3,
                 "to_grayscale: expected 3 channels, got " + std::to_string(image.dim(0)));
  const std::int64_t h = image.dim(1), w = image.dim(2);
  Tensor out({h, w});
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < w; ++j)
      out.at2(i, j) = kLumaR * image.at3(0, i, j) + kLumaG * image.at3(1, i, j) +
                      kLumaB * image.at3(2, i, j);
  return out;
}

// First-block difference map: the previous features are replaced by the
// gray-level low-quality image, upscaled to the feature resolution, and the
// difference is taken through the DCT round trip.
inline Tensor difference_map_first(const Tensor& f1_t, const Tensor& low_quality_image) {
  require_plane(f1_t, "difference_map_first");
  check_contract(low_quality_image.rank() == 3 && low_quality_image.dim(0) == 3,
                 "difference_map_first: low-quality image must be [3,h,w]");
  check_contract(f1_t.dim(0) >= low_quality_image.dim(1) && f1_t.dim(1) >= low_quality_image.dim(2),
                 "difference_map_first: feature resolution below low-quality resolution");
  const Tensor gray = to_grayscale(low_quality_image);
  const Tensor up = bilinear_upscale(gray, f1_t.dim(0), f1_t.dim(1));
  check_contract(up.same_shape(f1_t), "difference_map_first: upscale produced wrong resolution");
  Tensor spec(f1_t.shape());
  {
    const Tensor a = dct2d(f1_t);
    const Tensor b = dct2d(up);
    for (std::int64_t i = 0; i < spec.numel(); ++i) spec[i] = a[i] - b[i];
  }
  return idct2d(spec);
}

// Inner-block difference map: mean over the S previous maps of the spectral
// difference against the (upscaled) previous block, back in the spatial
// domain. prev_stack is [S,h,w] at the coarser resolution.
inline Tensor difference_map_inner(const Tensor& fm_t, const Tensor& prev_stack) {
  require_plane(fm_t, "difference_map_inner");
  check_contract(prev_stack.rank() == 3, "difference_map_inner: prev stack must be [S,h,w]");
  const std::int64_t s_count = prev_stack.dim(0);
  check_contract(s_count >= 1, "difference_map_inner: empty previous feature stack");
  const std::int64_t ph = prev_stack.dim(1), pw = prev_stack.dim(2);
  check_contract(fm_t.dim(0) >= ph && fm_t.dim(1) >= pw,
                 "difference_map_inner: feature resolution below previous resolution");
  const Tensor fm_spec = dct2d(fm_t);
  Tensor acc(fm_t.shape());
  for (std::int64_t s = 0; s < s_count; ++s) {
    Tensor prev({ph, pw});
    for (std::int64_t i = 0; i < ph; ++i)
      for (std::int64_t j = 0; j < pw; ++j) prev.at2(i, j) = prev_stack.at3(s, i, j);
    const Tensor up_spec = dct2d(bilinear_upscale(prev, fm_t.dim(0), fm_t.dim(1)));
    for (std::int64_t i = 0; i < acc.numel(); ++i) acc[i] += fm_spec[i] - up_spec[i];
  }
  const double inv = 1.0 / static_cast<double>(s_count);
  for (std::int64_t i = 0; i < acc.numel(); ++i) acc[i] *= inv;
  return idct2d(acc);
}

}  // namespace ctfgan::spectral
