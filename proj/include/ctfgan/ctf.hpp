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

#include <memory>
#include <string>
#include <vector>

#include "ctfgan/nn/layers.hpp"
#include "ctfgan/nn/module.hpp"
#include "ctfgan/ops.hpp"

// Conditional transferring features. Each block of the transfer generator
// contributes one tensor: T difference maps between the block's features and
// the (upscaled) stage below, computed through a DCT round trip, plus E
// spatially constant channels carrying an embedding of the class-conditional
// normalization rows and the low-quality label.
namespace ctfgan {

inline Tensor one_hot(const std::vector<std::int64_t>& labels, std::int64_t num_classes) {
  const auto n = static_cast<std::int64_t>(labels.size());
  Tensor out({n, num_classes});
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t l = labels[static_cast<std::size_t>(i)];
    check_label(l >= 0 && l < num_classes,
                "one_hot: label " + std::to_string(l) + " outside [0," +
                    std::to_string(num_classes) + ")");
    out.at2(i, l) = 1.0;
  }
  return out;
}

// Per-block output of the transfer generator needed downstream.
struct BlockTraceEntry {
  Var f;           // [N, T_m, h_m, w_m]
  Var gamma_rows;  // [N, T_m] selected rows of the block's second CBN
  Var beta_rows;   // [N, T_m]
};

struct GlhTrace {
  Tensor lq_image;                           // [N, 3, h, w]
  std::vector<std::int64_t> lq_labels;       // g_L, length N
  std::vector<std::int64_t> target_classes;  // c, length N
  std::vector<BlockTraceEntry> blocks;       // F_1 .. F_M
};

struct CtfTensor {
  Var maps;                  // [N, T+E, h_m, w_m]
  std::int64_t block_index;  // 1-based m
  std::int64_t t_channels;
  std::int64_t e_channels;
};

// Difference maps for the first block: in the transform domain, subtract the
// spectrum of the upscaled grayscale LQ image from each feature channel's
// spectrum, then transform back.
inline Var ctf_h_first(const Var& f1, const Tensor& lq) {
  const Tensor& fv = f1.value();
  check_contract(fv.rank() == 4, "ctf_h_first: features must be [N,T,H,W]");
  check_contract(lq.rank() == 4 && lq.dim(1) == 3, "ctf_h_first: LQ batch must be [N,3,h,w]");
  check_contract(fv.dim(0) == lq.dim(0), "ctf_h_first: batch mismatch");
  const std::int64_t h = fv.dim(2), w = fv.dim(3);
  Var lq_c = ops::constant(lq);
  Var base = ops::dct2d(ops::bilinear_upscale(ops::to_grayscale(lq_c), h, w));
  Var diff = ops::sub(ops::dct2d(f1), ops::broadcast_dim1(base, fv.dim(1)));
  return ops::idct2d(diff);
}

// Difference maps for inner blocks: each feature channel's spectrum minus
// the mean spectrum of the upscaled previous-block channels.
inline Var ctf_h_inner(const Var& fm, const Var& prev) {
  const Tensor& fv = fm.value();
  const Tensor& pv = prev.value();
  check_contract(fv.rank() == 4 && pv.rank() == 4, "ctf_h_inner: rank-4 stacks expected");
  check_contract(fv.dim(0) == pv.dim(0), "ctf_h_inner: batch mismatch");
  check_contract(pv.dim(1) >= 1, "ctf_h_inner: empty previous stack");
  const std::int64_t h = fv.dim(2), w = fv.dim(3);
  Var base = ops::mean_dim1_keep(ops::dct2d(ops::bilinear_upscale(prev, h, w)));
  Var diff = ops::sub(ops::dct2d(fm), ops::broadcast_dim1(base, fv.dim(1)));
  return ops::idct2d(diff);
}

// Embed(Concat(gamma_rows, beta_rows, onehot(g_L))) through a bias-free
// table; with an identity table the embedding is the concatenation itself.
inline Var embed_labels(const Var& gamma_rows, const Var& beta_rows, const Tensor& lq_onehot,
                        const Var& table) {
  check_contract(gamma_rows.value().rank() == 2 && beta_rows.value().rank() == 2 &&
                     lq_onehot.rank() == 2,
                 "embed_labels: rank-2 inputs expected");
  check_contract(gamma_rows.value().same_shape(beta_rows.value()),
                 "embed_labels: gamma/beta row shape mismatch");
  Var cat = ops::concat_dim1(ops::concat_dim1(gamma_rows, beta_rows), ops::constant(lq_onehot));
  check_contract(cat.value().dim(1) == table.value().dim(0),
                 "embed_labels: table input_dim " + std::to_string(table.value().dim(0)) +
                     " does not match concatenated width " +
                     std::to_string(cat.value().dim(1)));
  return ops::matmul(cat, table);
}

// Concat(H_m, broadcast embedding): channels T then E, resolution of H_m.
inline CtfTensor assemble_ctf(const Var& h_m, const Var& embed_vec, std::int64_t block_index) {
  const Tensor& hv = h_m.value();
  check_contract(hv.rank() == 4, "assemble_ctf: H_m must be [N,T,h,w]");
  check_contract(embed_vec.value().rank() == 2 && embed_vec.value().dim(0) == hv.dim(0),
                 "assemble_ctf: embedding batch mismatch");
  check_contract(embed_vec.value().dim(1) >= 1, "assemble_ctf: embedding width must be >= 1");
  Var constant_maps = ops::spatial_broadcast(embed_vec, hv.dim(2), hv.dim(3));
  return CtfTensor{ops::concat_dim1(h_m, constant_maps), block_index, hv.dim(1),
                   embed_vec.value().dim(1)};
}

// Owns one embedding table per block; input width 2*T_m + c_L.
class CtfExtractor : public nn::Module {
 public:
  CtfExtractor(const std::vector<std::int64_t>& t_widths, std::int64_t num_lq_classes,
               std::int64_t embed_dim, RngStream& rng)
      : num_lq_classes_(num_lq_classes), embed_dim_(embed_dim) {
    check_contract(!t_widths.empty(), "CtfExtractor: at least one block required");
    check_contract(embed_dim >= 1, "CtfExtractor: embed_dim must be >= 1");
    tables_.reserve(t_widths.size());
    for (std::size_t m = 0; m < t_widths.size(); ++m) {
      const std::int64_t in_dim = 2 * t_widths[m] + num_lq_classes;
      tables_.push_back(
          Var::leaf(nn::glorot_uniform({in_dim, embed_dim}, in_dim, embed_dim, rng), true));
    }
    for (std::size_t m = 0; m < tables_.size(); ++m)
      add_param("table" + std::to_string(m + 1), &tables_[m]);
  }

  std::int64_t embed_dim() const { return embed_dim_; }

  std::int64_t ctf_channels(std::size_t block) const {
    return (tables_[block].value().dim(0) - num_lq_classes_) / 2 + embed_dim_;
  }

  std::vector<CtfTensor> extract(const GlhTrace& trace) const {
    check_contract(trace.blocks.size() == tables_.size(),
                   "CtfExtractor: trace has " + std::to_string(trace.blocks.size()) +
                       " blocks, extractor expects " + std::to_string(tables_.size()));
    Tensor lq_onehot = one_hot(trace.lq_labels, num_lq_classes_);
    std::vector<CtfTensor> out;
    out.reserve(trace.blocks.size());
    std::int64_t prev_res = 0;
    for (std::size_t m = 0; m < trace.blocks.size(); ++m) {
      const BlockTraceEntry& blk = trace.blocks[m];
      check_contract(blk.f.value().defined() && blk.f.value().rank() == 4,
                     "CtfExtractor: block " + std::to_string(m + 1) + " missing features");
      Var h = m == 0 ? ctf_h_first(blk.f, trace.lq_image)
                     : ctf_h_inner(blk.f, trace.blocks[m - 1].f);
      Var evec = embed_labels(blk.gamma_rows, blk.beta_rows, lq_onehot, tables_[m]);
      out.push_back(assemble_ctf(h, evec, static_cast<std::int64_t>(m + 1)));
      const std::int64_t res = out.back().maps.value().dim(2);
      check_contract(res > prev_res, "CtfExtractor: resolutions must strictly increase");
      prev_res = res;
    }
    return out;
  }

 private:
  std::int64_t num_lq_classes_, embed_dim_;
  std::vector<Var> tables_;
};

}  // namespace ctfgan
