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

#include "ctfgan/ctf.hpp"
#include "ctfgan/nn/layers.hpp"
#include "ctfgan/ops.hpp"

namespace ctfgan {

struct GaConfig {
  std::int64_t num_hq_classes = 2;
  std::int64_t noise_dim = 32;
  std::int64_t base_channels = 32;              // width at the seed resolution
  std::vector<std::int64_t> widths = {32, 32};  // per-block output channels
  std::int64_t seed_resolution = 8;             // HQ resolution / 2^blocks
  bool conditional_norm = false;                // plain BN by default

  std::int64_t blocks() const { return static_cast<std::int64_t>(widths.size()); }
  std::int64_t output_resolution() const { return seed_resolution << widths.size(); }
};

// Normalization slot that is either plain or class-conditional, so block
// code reads identically for both settings.
class GaNorm : public nn::Module {
 public:
  GaNorm(bool conditional, std::int64_t num_classes, std::int64_t ch) {
    if (conditional) {
      cbn_ = std::make_unique<nn::CondBatchNorm2d>(num_classes, ch);
      add_child("cbn", cbn_.get());
    } else {
      bn_ = std::make_unique<nn::BatchNorm2d>(ch);
      add_child("bn", bn_.get());
    }
  }

  Var forward(const Var& x, const std::vector<std::int64_t>& labels) {
    return cbn_ ? cbn_->forward(x, labels) : bn_->forward(x);
  }

  std::unique_ptr<nn::BatchNorm2d> bn_;
  std::unique_ptr<nn::CondBatchNorm2d> cbn_;
};

// Upsampling residual block: norm -> ReLU -> 2x nearest -> conv -> norm ->
// ReLU -> conv, shortcut 2x nearest -> 1x1 conv.
class GaUpBlock : public nn::Module {
 public:
  GaUpBlock(std::int64_t in_ch, std::int64_t out_ch, bool conditional, std::int64_t num_classes,
            RngStream& rng)
      : n1_(conditional, num_classes, in_ch),
        c1_(in_ch, out_ch, 3, 1, rng),
        n2_(conditional, num_classes, out_ch),
        c2_(out_ch, out_ch, 3, 1, rng),
        sc_(in_ch, out_ch, 1, 0, rng) {
    add_child("n1", &n1_);
    add_child("c1", &c1_);
    add_child("n2", &n2_);
    add_child("c2", &c2_);
    add_child("sc", &sc_);
  }

  Var forward(const Var& x, const std::vector<std::int64_t>& labels) {
    Var h = ops::upsample_nearest2x(ops::relu(n1_.forward(x, labels)));
    h = c1_.forward(h);
    h = c2_.forward(ops::relu(n2_.forward(h, labels)));
    Var shortcut = sc_.forward(ops::upsample_nearest2x(x));
    return ops::add(h, shortcut);
  }

  GaNorm n1_;
  nn::Conv2d c1_;
  GaNorm n2_;
  nn::Conv2d c2_;
  nn::Conv2d sc_;
};

// Main generator: noise seed, M upsampling blocks, and after each block a
// fusion convolution over the block output concatenated with the matching
// transferred feature tensor.
class SynthesisGenerator : public nn::Module {
 public:
  // ctf_channels[m] = channel count of the tensor injected after block m+1.
  SynthesisGenerator(const GaConfig& cfg, const std::vector<std::int64_t>& ctf_channels,
                     RngStream& rng)
      : cfg_(cfg),
        ctf_channels_(ctf_channels),
        fc_(cfg.noise_dim, cfg.base_channels * cfg.seed_resolution * cfg.seed_resolution, rng),
        head_norm_(cfg.widths.empty() ? 1 : cfg.widths.back()),
        head_conv_(cfg.widths.empty() ? 1 : cfg.widths.back(), 3, 3, 1, rng) {
    check_contract(!cfg.widths.empty(), "SynthesisGenerator: at least one block required");
    check_contract(ctf_channels.size() == cfg.widths.size(),
                   "SynthesisGenerator: need one fused channel count per block");
    check_contract(cfg.noise_dim >= 1 && cfg.base_channels >= 1 && cfg.seed_resolution >= 1,
                   "SynthesisGenerator: all dimensions must be positive");
    std::int64_t in_ch = cfg.base_channels;
    for (std::size_t m = 0; m < cfg.widths.size(); ++m) {
      check_contract(cfg.widths[m] >= 1 && ctf_channels[m] >= 1,
                     "SynthesisGenerator: widths must be positive");
      blocks_.push_back(std::make_unique<GaUpBlock>(in_ch, cfg.widths[m], cfg.conditional_norm,
                                                    cfg.num_hq_classes, rng));
      fusions_.push_back(std::make_unique<nn::Conv2d>(cfg.widths[m] + ctf_channels[m],
                                                      cfg.widths[m], 3, 1, rng));
      in_ch = cfg.widths[m];
    }
    add_child("fc", &fc_);
    for (std::size_t m = 0; m < blocks_.size(); ++m) {
      add_child("block" + std::to_string(m + 1), blocks_[m].get());
      add_child("fuse" + std::to_string(m + 1), fusions_[m].get());
    }
    add_child("head_norm", &head_norm_);
    add_child("head_conv", &head_conv_);
  }

  const GaConfig& config() const { return cfg_; }

  Var forward(const Tensor& z, const std::vector<CtfTensor>& ctfs,
              const std::vector<std::int64_t>& labels) {
    const std::int64_t n = z.dim(0);
    check_contract(z.rank() == 2 && z.dim(1) == cfg_.noise_dim,
                   "SynthesisGenerator: noise must be [N," + std::to_string(cfg_.noise_dim) +
                       "]");
    check_contract(static_cast<std::int64_t>(ctfs.size()) == cfg_.blocks(),
                   "SynthesisGenerator: expected " + std::to_string(cfg_.blocks()) +
                       " feature tensors, got " + std::to_string(ctfs.size()));
    check_contract(static_cast<std::int64_t>(labels.size()) == n,
                   "SynthesisGenerator: label count mismatch");
    for (auto c : labels)
      check_label(c >= 0 && c < cfg_.num_hq_classes, "SynthesisGenerator: class out of range");

    Var x = ops::reshape(fc_.forward(ops::constant(z)),
                         {n, cfg_.base_channels, cfg_.seed_resolution, cfg_.seed_resolution});
    std::int64_t res = cfg_.seed_resolution;
    for (std::size_t m = 0; m < blocks_.size(); ++m) {
      res *= 2;
      const Tensor& cv = ctfs[m].maps.value();
      check_contract(cv.rank() == 4 && cv.dim(0) == n && cv.dim(1) == ctf_channels_[m] &&
                         cv.dim(2) == res && cv.dim(3) == res,
                     "SynthesisGenerator: injected tensor " + std::to_string(m + 1) +
                         " has shape " + shape_str(cv.shape()) + ", expected [" +
                         std::to_string(n) + "," + std::to_string(ctf_channels_[m]) + "," +
                         std::to_string(res) + "," + std::to_string(res) + "]");
      x = blocks_[m]->forward(x, labels);
      x = fusions_[m]->forward(ops::concat_dim1(x, ctfs[m].maps));
    }
    return ops::tanh(head_conv_.forward(ops::relu(head_norm_.forward(x))));
  }

  GaConfig cfg_;
  std::vector<std::int64_t> ctf_channels_;
  nn::Linear fc_;
  std::vector<std::unique_ptr<GaUpBlock>> blocks_;
  std::vector<std::unique_ptr<nn::Conv2d>> fusions_;
  nn::BatchNorm2d head_norm_;
  nn::Conv2d head_conv_;
};

// Shape-preserving ablation: replace every injected tensor with zeros while
// keeping the metadata, so the forward pass is identical except for content.
inline std::vector<CtfTensor> zero_ctfs_like(const std::vector<CtfTensor>& ctfs) {
  std::vector<CtfTensor> out;
  out.reserve(ctfs.size());
  for (const auto& c : ctfs)
    out.push_back(CtfTensor{Var::leaf(Tensor(c.maps.value().shape()), false), c.block_index,
                            c.t_channels, c.e_channels});
  return out;
}

}  // namespace ctfgan
