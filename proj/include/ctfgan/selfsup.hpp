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

#include <optional>
#include <vector>

#include "ctfgan/ops.hpp"
#include "ctfgan/rng.hpp"
#include "ctfgan/tensor.hpp"

// Patch-location self-supervision: cut a random patch from a pool image,
// paste it at a random location, and later regress the pasted bounding box.
namespace ctfgan {

struct PatchAnnotation {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;  // normalized, x = column axis
  std::int64_t source_index = -1;
  std::int64_t patch_h = 0, patch_w = 0;

  Tensor as_tensor() const { return Tensor({4}, {x1, y1, x2, y2}); }
};

// Patch side lengths are drawn uniformly from [side/8, side/3], clamped to
// at least one pixel.
inline std::pair<std::int64_t, std::int64_t> draw_patch_size(std::int64_t side, RngStream& rng) {
  const std::int64_t lo = std::max<std::int64_t>(1, side / 8);
  const std::int64_t hi = std::max<std::int64_t>(lo, side / 3);
  return {rng.range(lo, hi), rng.range(lo, hi)};
}

// Copies `target`, overwrites a random rectangle with a patch cut from a
// random pool image, and reports the pasted region. Pixels outside the
// rectangle are untouched.
inline std::pair<Tensor, PatchAnnotation> paste_random_patch(const Tensor& target,
                                                             const std::vector<Tensor>& hq_pool,
                                                             RngStream& rng) {
  check_contract(target.rank() == 3 && target.dim(0) == 3, "paste: target must be [3,H,W]");
  if (hq_pool.empty()) throw DataError("paste: empty patch pool");
  const std::int64_t h = target.dim(1), w = target.dim(2);

  auto [ph, pw] = draw_patch_size(std::min(h, w), rng);
  check_contract(ph <= h && pw <= w, "paste: patch larger than image");
  const auto src_idx = rng.below(static_cast<std::int64_t>(hq_pool.size()));
  const Tensor& src = hq_pool[static_cast<std::size_t>(src_idx)];
  check_contract(src.rank() == 3 && src.dim(0) == 3 && src.dim(1) >= ph && src.dim(2) >= pw,
                 "paste: pool image too small for the drawn patch");

  const std::int64_t sy = rng.below(src.dim(1) - ph + 1);
  const std::int64_t sx = rng.below(src.dim(2) - pw + 1);
  const std::int64_t dy = rng.below(h - ph + 1);
  const std::int64_t dx = rng.below(w - pw + 1);

  Tensor out = target;
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < ph; ++y)
      for (std::int64_t x = 0; x < pw; ++x)
        out.at3(c, dy + y, dx + x) = src.at3(c, sy + y, sx + x);

  PatchAnnotation ann;
  ann.x1 = static_cast<double>(dx) / static_cast<double>(w);
  ann.y1 = static_cast<double>(dy) / static_cast<double>(h);
  ann.x2 = static_cast<double>(dx + pw) / static_cast<double>(w);
  ann.y2 = static_cast<double>(dy + ph) / static_cast<double>(h);
  ann.source_index = src_idx;
  ann.patch_h = ph;
  ann.patch_w = pw;
  return {std::move(out), ann};
}

inline Tensor extract_patch(const Tensor& image, const PatchAnnotation& ann) {
  check_contract(image.rank() == 3 && image.dim(0) == 3, "extract: image must be [3,H,W]");
  check_contract(0.0 <= ann.x1 && ann.x1 < ann.x2 && ann.x2 <= 1.0 && 0.0 <= ann.y1 &&
                     ann.y1 < ann.y2 && ann.y2 <= 1.0,
                 "extract: malformed bounding box");
  const std::int64_t h = image.dim(1), w = image.dim(2);
  const auto dy = static_cast<std::int64_t>(std::llround(ann.y1 * static_cast<double>(h)));
  const auto dx = static_cast<std::int64_t>(std::llround(ann.x1 * static_cast<double>(w)));
  Tensor out({3, ann.patch_h, ann.patch_w});
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < ann.patch_h; ++y)
      for (std::int64_t x = 0; x < ann.patch_w; ++x)
        out.at3(c, y, x) = image.at3(c, dy + y, dx + x);
  return out;
}

// Applies the paste to the first round(fraction*N) images of a batch.
// Returns the modified batch and one annotation per pasted sample.
struct PastedBatch {
  Tensor images;  // [N,3,H,W]
  std::vector<std::optional<PatchAnnotation>> annotations;
  std::int64_t pasted_count = 0;
};

inline PastedBatch paste_batch_fraction(const Tensor& batch, const std::vector<Tensor>& hq_pool,
                                        double fraction, RngStream& rng) {
  check_contract(batch.rank() == 4 && batch.dim(1) == 3, "paste: batch must be [N,3,H,W]");
  check_contract(fraction >= 0.0 && fraction <= 1.0, "paste: fraction must lie in [0,1]");
  const std::int64_t n = batch.dim(0);
  const auto k = static_cast<std::int64_t>(std::llround(fraction * static_cast<double>(n)));
  PastedBatch out;
  out.images = batch;
  out.annotations.assign(static_cast<std::size_t>(n), std::nullopt);
  out.pasted_count = k;
  const std::int64_t chw = batch.dim(1) * batch.dim(2) * batch.dim(3);
  for (std::int64_t i = 0; i < k; ++i) {
    Tensor one({3, batch.dim(2), batch.dim(3)});
    std::copy_n(batch.data() + i * chw, chw, one.data());
    auto [pasted, ann] = paste_random_patch(one, hq_pool, rng);
    std::copy_n(pasted.data(), chw, out.images.data() + i * chw);
    out.annotations[static_cast<std::size_t>(i)] = ann;
  }
  return out;
}

// Smooth-L1 over the four normalized coordinates, summed per sample and
// averaged over the batch. A single coordinate off by 0.1 costs 0.005.
inline Var sp_loss(const Var& bbox_pred, const Tensor& bbox_target) {
  check_contract(bbox_pred.value().rank() == 2 && bbox_pred.value().dim(1) == 4,
                 "sp_loss: predictions must be [N,4]");
  check_contract(bbox_pred.value().same_shape(bbox_target), "sp_loss: target shape mismatch");
  for (std::int64_t i = 0; i < bbox_target.dim(0); ++i)
    check_contract(0.0 <= bbox_target.at2(i, 0) && bbox_target.at2(i, 0) < bbox_target.at2(i, 2) &&
                       bbox_target.at2(i, 2) <= 1.0 && 0.0 <= bbox_target.at2(i, 1) &&
                       bbox_target.at2(i, 1) < bbox_target.at2(i, 3) &&
                       bbox_target.at2(i, 3) <= 1.0,
                   "sp_loss: malformed bounding box target");
  return ops::mean_all(ops::sum_dim1(ops::smooth_l1(bbox_pred, bbox_target)));
}

}  // namespace ctfgan
