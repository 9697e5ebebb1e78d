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

struct GlhConfig {
  std::int64_t num_hq_classes = 2;
  std::int64_t num_lq_classes = 2;
  std::int64_t lq_resolution = 8;
  std::int64_t stem_channels = 16;
  std::vector<std::int64_t> widths = {16, 16};  // T_1..T_M, per-block output channels
  std::int64_t noise_dim = 8;                   // per-block z_m

  std::int64_t blocks() const { return static_cast<std::int64_t>(widths.size()); }
  std::int64_t output_resolution() const { return lq_resolution << widths.size(); }
};

// One Res+Unpool stage: noise is embedded to a single channel map and
// concatenated to the input, then CBN -> ReLU -> conv -> CBN -> ReLU ->
// nearest unpool -> conv, with a bilinearly upscaled 1x1 projection as the
// residual shortcut. Doubles the resolution.
class ResUnpoolBlock : public nn::Module {
 public:
  struct Out {
    Var f;
    Var gamma_rows;
    Var beta_rows;
  };

  ResUnpoolBlock(std::int64_t in_ch, std::int64_t out_ch, std::int64_t in_res,
                 std::int64_t noise_dim, std::int64_t num_classes, RngStream& rng)
      : in_res_(in_res),
        z_embed_(noise_dim, in_res * in_res, rng),
        cbn1_(num_classes, in_ch + 1),
        conv1_(in_ch + 1, out_ch, 3, 1, rng),
        cbn2_(num_classes, out_ch),
        conv2_(out_ch, out_ch, 3, 1, rng),
        proj_(in_ch + 1, out_ch, 1, 0, rng) {
    add_child("z_embed", &z_embed_);
    add_child("cbn1", &cbn1_);
    add_child("conv1", &conv1_);
    add_child("cbn2", &cbn2_);
    add_child("conv2", &conv2_);
    add_child("proj", &proj_);
  }

  Out forward(const Var& x, const Var& z, const std::vector<std::int64_t>& labels) {
    const std::int64_t n = x.value().dim(0);
    check_contract(x.value().rank() == 4 && x.value().dim(2) == in_res_ &&
                       x.value().dim(3) == in_res_,
                   "ResUnpoolBlock: input resolution mismatch, got " +
                       shape_str(x.value().shape()));
    check_contract(z.value().rank() == 2 && z.value().dim(0) == n,
                   "ResUnpoolBlock: noise must be [N,noise_dim]");
    Var zmap = ops::reshape(z_embed_.forward(z), {n, 1, in_res_, in_res_});
    Var xin = ops::concat_dim1(x, zmap);
    Var a = conv1_.forward(ops::relu(cbn1_.forward(xin, labels)));
    auto norm2 = cbn2_.forward_full(a, labels);
    Var b = conv2_.forward(ops::upsample_nearest2x(ops::relu(norm2.y)));
    Var shortcut = proj_.forward(ops::bilinear_upscale(xin, 2 * in_res_, 2 * in_res_));
    return {ops::add(b, shortcut), norm2.gamma_rows, norm2.beta_rows};
  }

  std::int64_t in_res_;
  nn::Linear z_embed_;
  nn::CondBatchNorm2d cbn1_;
  nn::Conv2d conv1_;
  nn::CondBatchNorm2d cbn2_;
  nn::Conv2d conv2_;
  nn::Conv2d proj_;
};

// Low-quality to high-quality translator. Exposes the per-block trace the
// feature extractor consumes.
class TransferGenerator : public nn::Module {
 public:
  struct Out {
    Var image;
    GlhTrace trace;
  };

  TransferGenerator(const GlhConfig& cfg, RngStream& rng)
      : cfg_(cfg),
        stem_(3, cfg.stem_channels, 3, 1, rng),
        head_(cfg.widths.empty() ? 1 : cfg.widths.back(), 3, 3, 1, rng) {
    check_contract(!cfg.widths.empty(), "TransferGenerator: at least one block required");
    check_contract(cfg.lq_resolution >= 1 && cfg.stem_channels >= 1 && cfg.noise_dim >= 1 &&
                       cfg.num_hq_classes >= 1 && cfg.num_lq_classes >= 1,
                   "TransferGenerator: all dimensions must be positive");
    for (auto w : cfg.widths)
      check_contract(w >= 1, "TransferGenerator: block widths must be positive");
    std::int64_t in_ch = cfg.stem_channels;
    std::int64_t res = cfg.lq_resolution;
    for (std::size_t m = 0; m < cfg.widths.size(); ++m) {
      blocks_.push_back(std::make_unique<ResUnpoolBlock>(in_ch, cfg.widths[m], res,
                                                         cfg.noise_dim, cfg.num_hq_classes, rng));
      in_ch = cfg.widths[m];
      res *= 2;
    }
    add_child("stem", &stem_);
    for (std::size_t m = 0; m < blocks_.size(); ++m)
      add_child("block" + std::to_string(m + 1), blocks_[m].get());
    add_child("head", &head_);
  }

  const GlhConfig& config() const { return cfg_; }

  std::vector<Tensor> draw_noises(std::int64_t n, RngStream& rng) const {
    std::vector<Tensor> out;
    out.reserve(blocks_.size());
    for (std::size_t m = 0; m < blocks_.size(); ++m)
      out.push_back(rng.normal_tensor({n, cfg_.noise_dim}));
    return out;
  }

  Out forward(const Tensor& lq, const std::vector<std::int64_t>& lq_labels,
              const std::vector<std::int64_t>& target_classes,
              const std::vector<Tensor>& noises) {
    const std::int64_t n = lq.dim(0);
    check_contract(lq.rank() == 4 && lq.dim(1) == 3 && lq.dim(2) == cfg_.lq_resolution &&
                       lq.dim(3) == cfg_.lq_resolution,
                   "TransferGenerator: LQ batch must be [N,3," +
                       std::to_string(cfg_.lq_resolution) + "," +
                       std::to_string(cfg_.lq_resolution) + "], got " + shape_str(lq.shape()));
    check_contract(static_cast<std::int64_t>(lq_labels.size()) == n &&
                       static_cast<std::int64_t>(target_classes.size()) == n,
                   "TransferGenerator: label count mismatch");
    for (auto l : lq_labels)
      check_label(l >= 0 && l < cfg_.num_lq_classes, "TransferGenerator: LQ label out of range");
    for (auto c : target_classes)
      check_label(c >= 0 && c < cfg_.num_hq_classes,
                  "TransferGenerator: target class out of range");
    check_contract(static_cast<std::int64_t>(noises.size()) == cfg_.blocks(),
                   "TransferGenerator: expected " + std::to_string(cfg_.blocks()) + " noises");

    GlhTrace trace;
    trace.lq_image = lq;
    trace.lq_labels = lq_labels;
    trace.target_classes = target_classes;
    Var x = stem_.forward(ops::constant(lq));
    for (std::size_t m = 0; m < blocks_.size(); ++m) {
      check_contract(noises[m].rank() == 2 && noises[m].dim(0) == n &&
                         noises[m].dim(1) == cfg_.noise_dim,
                     "TransferGenerator: noise " + std::to_string(m + 1) + " has shape " +
                         shape_str(noises[m].shape()));
      auto out = blocks_[m]->forward(x, Var::leaf(noises[m], false), target_classes);
      trace.blocks.push_back({out.f, out.gamma_rows, out.beta_rows});
      x = out.f;
    }
    return {ops::tanh(head_.forward(x)), std::move(trace)};
  }

  GlhConfig cfg_;
  nn::Conv2d stem_;
  std::vector<std::unique_ptr<ResUnpoolBlock>> blocks_;
  nn::Conv2d head_;
};

}  // namespace ctfgan
