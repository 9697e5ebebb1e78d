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

#include "ctfgan/nn/spectral_norm.hpp"
#include "ctfgan/ops.hpp"

namespace ctfgan {

struct DlhConfig {
  std::int64_t num_hq_classes = 2;
  std::int64_t resolution = 32;
  std::int64_t base_channels = 32;
  std::int64_t min_resolution = 4;  // trunk downsamples until this size
};

// First trunk stage: conv -> ReLU -> conv -> pool, pooled 1x1 shortcut.
// Works directly on image pixels, so no leading activation.
class DInitBlock : public nn::Module {
 public:
  DInitBlock(std::int64_t out_ch, RngStream& rng)
      : c1_(3, out_ch, 3, 1, rng), c2_(out_ch, out_ch, 3, 1, rng), sc_(3, out_ch, 1, 0, rng) {
    add_child("c1", &c1_);
    add_child("c2", &c2_);
    add_child("sc", &sc_);
  }

  Var forward(const Var& x) {
    Var h = ops::avg_pool2x2(c2_.forward(ops::relu(c1_.forward(x))));
    return ops::add(h, sc_.forward(ops::avg_pool2x2(x)));
  }

  nn::SNConv2d c1_, c2_, sc_;
};

// Pre-activation residual stage, optionally halving the resolution.
class DResBlock : public nn::Module {
 public:
  DResBlock(std::int64_t in_ch, std::int64_t out_ch, bool down, RngStream& rng)
      : down_(down), c1_(in_ch, out_ch, 3, 1, rng), c2_(out_ch, out_ch, 3, 1, rng) {
    add_child("c1", &c1_);
    add_child("c2", &c2_);
    if (down || in_ch != out_ch) {
      sc_ = std::make_unique<nn::SNConv2d>(in_ch, out_ch, 1, 0, rng);
      add_child("sc", sc_.get());
    }
  }

  Var forward(const Var& x) {
    Var h = c2_.forward(ops::relu(c1_.forward(ops::relu(x))));
    if (down_) h = ops::avg_pool2x2(h);
    Var s = x;
    if (sc_) s = sc_->forward(s);
    if (down_) s = ops::avg_pool2x2(s);
    return ops::add(h, s);
  }

  bool down_;
  nn::SNConv2d c1_, c2_;
  std::unique_ptr<nn::SNConv2d> sc_;
};

struct DiscOutput {
  Var scores;    // [N]
  Var bbox;      // [N,4] in (0,1)
  Var features;  // [N,feature_dim] pooled trunk output
};

// Shared discriminator: spectrally normalized residual trunk with global sum
// pooling, a projection-conditioned adversarial score, and a 4-way patch
// location regression head.
class Discriminator : public nn::Module {
 public:
  Discriminator(const DlhConfig& cfg, RngStream& rng) : cfg_(cfg) {
    check_contract(cfg.resolution >= 2 * cfg.min_resolution && cfg.min_resolution >= 1,
                   "Discriminator: resolution must allow at least one downsample");
    check_contract((cfg.resolution & (cfg.resolution - 1)) == 0,
                   "Discriminator: resolution must be a power of two");
    check_contract(cfg.base_channels >= 1 && cfg.num_hq_classes >= 1,
                   "Discriminator: dimensions must be positive");

    init_ = std::make_unique<DInitBlock>(cfg.base_channels, rng);
    add_child("init", init_.get());
    std::int64_t res = cfg.resolution / 2;
    std::int64_t ch = cfg.base_channels;
    int idx = 0;
    while (res > cfg.min_resolution) {
      const std::int64_t next_ch = std::min(ch * 2, cfg.base_channels * 4);
      blocks_.push_back(std::make_unique<DResBlock>(ch, next_ch, true, rng));
      add_child("down" + std::to_string(++idx), blocks_.back().get());
      ch = next_ch;
      res /= 2;
    }
    blocks_.push_back(std::make_unique<DResBlock>(ch, ch, false, rng));
    add_child("final", blocks_.back().get());
    feature_dim_ = ch;

    adv_ = std::make_unique<nn::SNLinear>(ch, 1, rng);
    embed_ = std::make_unique<nn::SNEmbedding>(cfg.num_hq_classes, ch, rng);
    sp_ = std::make_unique<nn::SNLinear>(ch, 4, rng);
    add_child("adv", adv_.get());
    add_child("embed", embed_.get());
    add_child("sp", sp_.get());
  }

  std::int64_t feature_dim() const { return feature_dim_; }

  DiscOutput forward(const Var& images, const std::vector<std::int64_t>& labels) {
    const Tensor& iv = images.value();
    const std::int64_t n = iv.dim(0);
    check_contract(iv.rank() == 4 && iv.dim(1) == 3 && iv.dim(2) == cfg_.resolution &&
                       iv.dim(3) == cfg_.resolution,
                   "Discriminator: images must be [N,3," + std::to_string(cfg_.resolution) +
                       "," + std::to_string(cfg_.resolution) + "], got " + shape_str(iv.shape()));
    check_contract(iv.max_abs() <= 1.0 + 1e-9, "Discriminator: pixel range exceeds [-1,1]");
    check_contract(static_cast<std::int64_t>(labels.size()) == n,
                   "Discriminator: label count mismatch");
    for (auto c : labels)
      check_label(c >= 0 && c < cfg_.num_hq_classes, "Discriminator: class out of range");

    Var h = init_->forward(images);
    for (auto& b : blocks_) h = b->forward(h);
    Var phi = ops::spatial_sum(ops::relu(h));  // [N, feature_dim]
    Var base = ops::reshape(adv_->forward(phi), {n});
    Var proj = ops::sum_dim1(ops::mul(embed_->forward(labels), phi));
    Var bbox = ops::sigmoid(sp_->forward(phi));
    return {ops::add(base, proj), bbox, phi};
  }

  DlhConfig cfg_;
  std::int64_t feature_dim_ = 0;
  std::unique_ptr<DInitBlock> init_;
  std::vector<std::unique_ptr<DResBlock>> blocks_;
  std::unique_ptr<nn::SNLinear> adv_;
  std::unique_ptr<nn::SNEmbedding> embed_;
  std::unique_ptr<nn::SNLinear> sp_;
};

}  // namespace ctfgan
