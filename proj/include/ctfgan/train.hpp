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
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ctfgan/config.hpp"
#include "ctfgan/ctf.hpp"
#include "ctfgan/data.hpp"
#include "ctfgan/eval.hpp"
#include "ctfgan/models/discriminator.hpp"
#include "ctfgan/models/synthesis_generator.hpp"
#include "ctfgan/models/transfer_generator.hpp"
#include "ctfgan/optim.hpp"
#include "ctfgan/selfsup.hpp"
#include "ctfgan/serialize.hpp"

namespace ctfgan {

struct LossRecord {
  double d_adv = 0.0;
  double g_adv = 0.0;
  double sp = 0.0;
  std::int64_t phase = 1;
  std::int64_t step = 0;
  double wall_ms = 0.0;
};

// Patience rule over a stream of metric evaluations (lower is better).
// The first value seeds the best; each later value either improves on the
// best by more than `threshold` (relative) and resets the counter, or
// increments it. Switching is due once the counter reaches `patience`.
class PatienceTracker {
 public:
  PatienceTracker(std::int64_t patience, double threshold)
      : patience_(patience), threshold_(threshold) {
    check_contract(patience >= 1, "PatienceTracker: patience must be >= 1");
    check_contract(threshold >= 0.0, "PatienceTracker: threshold must be >= 0");
  }

  bool record(double value) {
    check_numeric(std::isfinite(value), "PatienceTracker: non-finite metric");
    if (!has_best_) {
      has_best_ = true;
      best_ = value;
      return false;
    }
    if (value < best_ * (1.0 - threshold_)) {
      best_ = value;
      no_improve_ = 0;
    } else {
      ++no_improve_;
    }
    return due();
  }

  bool due() const { return has_best_ && no_improve_ >= patience_; }
  bool has_best() const { return has_best_; }
  double best() const { return best_; }
  std::int64_t no_improve() const { return no_improve_; }

  void restore(bool has_best, double best, std::int64_t no_improve) {
    has_best_ = has_best;
    best_ = best;
    no_improve_ = no_improve;
  }

 private:
  std::int64_t patience_;
  double threshold_;
  bool has_best_ = false;
  double best_ = 0.0;
  std::int64_t no_improve_ = 0;
};

// Convenience form over a whole history, for scripted-sequence tests.
inline bool phase_switch_due(const std::vector<double>& metric_history,
                             std::int64_t patience, double threshold) {
  PatienceTracker t(patience, threshold);
  for (double v : metric_history)
    if (t.record(v)) return true;
  return false;
}

// Two-phase adversarial trainer. Phase 1 trains the transfer generator
// against the shared discriminator; phase 2 trains the synthesis generator
// on transferred features with the transfer generator frozen by default.
// All randomness flows through named seeded streams, so runs are
// reproducible and resumable bit for bit.
class Trainer {
 public:
  Trainer(const RunConfig& cfg, const Dataset* hq, const Dataset* lq)
      : cfg_(cfg),
        hq_(hq),
        lq_(lq),
        rng_noise_(cfg.seed, "noise"),
        rng_sp_(cfg.seed, "selfsup"),
        sampler_(hq, lq, cfg.train.batch_size, cfg.seed),
        patience_(cfg.train.patience, cfg.train.improvement_threshold) {
    check_contract(hq_->resolution == cfg_.data.hq_resolution,
                   "Trainer: dataset resolution " + std::to_string(hq_->resolution) +
                       " does not match config " + std::to_string(cfg_.data.hq_resolution));
    check_contract(lq_->resolution == cfg_.lq_resolution(),
                   "Trainer: LQ resolution " + std::to_string(lq_->resolution) +
                       " does not match config-implied " +
                       std::to_string(cfg_.lq_resolution()));

    RngStream rng_init(cfg_.seed, "init");
    GlhConfig glh_cfg;
    glh_cfg.num_hq_classes = cfg_.data.hq_classes;
    glh_cfg.num_lq_classes = cfg_.data.lq_classes;
    glh_cfg.lq_resolution = cfg_.lq_resolution();
    glh_cfg.stem_channels = cfg_.model.glh_stem;
    glh_cfg.widths = cfg_.model.glh_widths;
    glh_cfg.noise_dim = cfg_.model.glh_noise_dim;
    glh_ = std::make_unique<TransferGenerator>(glh_cfg, rng_init);

    ex_ = std::make_unique<CtfExtractor>(cfg_.model.glh_widths, cfg_.data.lq_classes,
                                         cfg_.model.embed_dim, rng_init);
    std::vector<std::int64_t> inj;
    for (std::size_t m = 0; m < cfg_.model.glh_widths.size(); ++m)
      inj.push_back(ex_->ctf_channels(m));

    GaConfig ga_cfg;
    ga_cfg.num_hq_classes = cfg_.data.hq_classes;
    ga_cfg.noise_dim = cfg_.model.ga_noise_dim;
    ga_cfg.base_channels = cfg_.model.ga_base;
    ga_cfg.widths = cfg_.model.ga_widths;
    ga_cfg.seed_resolution = cfg_.lq_resolution();
    ga_cfg.conditional_norm = cfg_.model.ga_conditional_norm;
    ga_ = std::make_unique<SynthesisGenerator>(ga_cfg, inj, rng_init);

    DlhConfig d_cfg;
    d_cfg.num_hq_classes = cfg_.data.hq_classes;
    d_cfg.resolution = cfg_.data.hq_resolution;
    d_cfg.base_channels = cfg_.model.d_base;
    d_ = std::make_unique<Discriminator>(d_cfg, rng_init);

    const AdamConfig ad{cfg_.train.lr, cfg_.train.beta1, cfg_.train.beta2, 1e-8};
    opt_d_ = std::make_unique<Adam>(d_->named_params(), ad);
    opt_glh_ = std::make_unique<Adam>(glh_->named_params(), ad);
    std::vector<std::pair<std::string, Var*>> ga_params = ga_->named_params();
    {
      auto ex_params = ex_->named_params();
      for (auto& [name, p] : ex_params) ga_params.emplace_back("ex." + name, p);
      if (!cfg_.train.freeze_glh)
        for (auto& [name, p] : glh_->named_params()) ga_params.emplace_back("glh." + name, p);
    }
    opt_ga_ = std::make_unique<Adam>(ga_params, ad);

    // Surrogate classifier: trained once, deterministically, on the HQ
    // corpus. Its fingerprint scopes every report this run emits.
    RngStream rng_clf(cfg_.seed, "clf");
    clf_ = std::make_unique<ToyClassifier>(cfg_.data.hq_classes, cfg_.data.hq_resolution,
                                           rng_clf);
    clf_accuracy_ = train_classifier(*clf_, *hq_, cfg_.seed);

    // Reference features for the FID surrogate: every 4th HQ image. This
    // slice is not held out from training; at desk scale the monitor only
    // has to rank checkpoints, not certify generalization.
    refresh_real_features();
  }

  void refresh_real_features() {
    std::vector<std::int64_t> ref_idx;
    for (std::int64_t i = 0; i < hq_->size(); i += 4) ref_idx.push_back(i);
    if (ref_idx.size() < 2) ref_idx = {0, hq_->size() - 1};
    Tensor ref({static_cast<std::int64_t>(ref_idx.size()), 3, hq_->resolution,
                hq_->resolution});
    for (std::size_t i = 0; i < ref_idx.size(); ++i) {
      const Tensor& img = hq_->samples[static_cast<std::size_t>(ref_idx[i])].image;
      std::copy(img.data(), img.data() + img.numel(),
                ref.data() + static_cast<std::int64_t>(i) * img.numel());
    }
    real_features_ = classifier_features(*clf_, ref);
  }

  // ---- single steps ----

  LossRecord phase1_step() {
    check_contract(phase_ == 1, "phase1_step: trainer is in phase 2");
    return adversarial_step();
  }

  LossRecord phase2_step() {
    check_contract(phase_ == 2, "phase2_step: trainer is in phase 1");
    return adversarial_step();
  }

  // Transitions 1 -> 2, freezing the transfer generator when configured.
  void switch_phase() {
    check_contract(phase_ == 1, "switch_phase: already in phase 2");
    phase_ = 2;
    step_ = 0;
    if (cfg_.train.freeze_glh)
      for (auto* p : glh_->params()) p->node()->requires_grad = false;
  }

  // ---- evaluation ----

  // Deterministic surrogate evaluation. `tag` seeds a dedicated stream so
  // a later replay of the same tag reproduces the report exactly.
  EvalReport evaluate(const std::string& tag) {
    RngStream erng(cfg_.seed, "eval-" + tag);
    const std::int64_t n = cfg_.train.eval_samples;
    Tensor fakes({n, 3, hq_->resolution, hq_->resolution});
    const std::int64_t chunk = 16;
    for (std::int64_t start = 0; start < n; start += chunk) {
      const std::int64_t cnt = std::min(chunk, n - start);
      const Tensor part = generate(cnt, start, erng);
      std::copy(part.data(), part.data() + part.numel(),
                fakes.data() + start * 3 * hq_->resolution * hq_->resolution);
    }
    return evaluate_samples(*clf_, fakes, real_features_, step_, phase_);
  }

  // Generates `n` images with the phase-appropriate generator. `offset`
  // indexes the deterministic LQ conditioning slice; `rng` supplies noise.
  Tensor generate(std::int64_t n, std::int64_t offset, RngStream& rng) {
    NoGradGuard ng;
    Tensor lq({n, 3, lq_->resolution, lq_->resolution});
    std::vector<std::int64_t> lq_labels, targets;
    for (std::int64_t i = 0; i < n; ++i) {
      const auto& s =
          lq_->samples[static_cast<std::size_t>(((offset + i) * 4) % lq_->size())];
      std::copy(s.image.data(), s.image.data() + s.image.numel(),
                lq.data() + i * s.image.numel());
      lq_labels.push_back(s.label);
      targets.push_back((offset + i) % cfg_.data.hq_classes);
    }
    if (phase_ == 1) {
      auto out = glh_->forward(lq, lq_labels, targets, glh_->draw_noises(n, rng));
      return out.image.value();
    }
    auto out = glh_->forward(lq, lq_labels, targets, glh_->draw_noises(n, rng));
    auto ctfs = ex_->extract(out.trace);
    if (cfg_.train.ablate_ctfs) ctfs = zero_ctfs_like(ctfs);
    const Tensor z = rng.normal_tensor({n, cfg_.model.ga_noise_dim});
    return ga_->forward(z, ctfs, targets).value();
  }

  // ---- checkpointing ----

  Checkpoint snapshot() {
    Checkpoint ck;
    ck.header["format"] = "ctfgan-run";
    ck.header["version"] = kCheckpointVersion;
    ck.header["config"] = run_config_to_json(cfg_);
    ck.header["config_hash"] = hash_hex(config_hash(cfg_));
    ck.header["phase"] = phase_;
    ck.header["step"] = step_;
    ck.header["d_updates"] = d_updates_;
    ck.header["g_updates"] = g_updates_;
    ck.header["has_best"] = patience_.has_best();
    ck.header["best_fid"] = patience_.best();
    ck.header["no_improve"] = patience_.no_improve();
    ck.header["rng_noise"] = rng_noise_.serialize();
    ck.header["rng_sp"] = rng_sp_.serialize();
    ck.header["classifier_fingerprint"] = hash_hex(clf_->fingerprint());
    ck.header["classifier_accuracy"] = clf_accuracy_;

    const auto put = [&ck](const std::string& prefix, const std::map<std::string, Tensor>& st) {
      for (const auto& [k, t] : st) ck.tensors[prefix + k] = t;
    };
    put("glh.", glh_->state_dict());
    put("ga.", ga_->state_dict());
    put("ex.", ex_->state_dict());
    put("d.", d_->state_dict());
    put("clf.", clf_->state_dict());
    put("opt_d.", opt_d_->state_dict());
    put("opt_glh.", opt_glh_->state_dict());
    put("opt_ga.", opt_ga_->state_dict());
    put("sampler.", sampler_.state_dict());
    return ck;
  }

  // `check_config` may be disabled for controlled ablation arms that share
  // trained weights across configs differing only in ablation flags.
  void restore(const Checkpoint& ck, bool check_config = true) {
    if (check_config &&
        (!ck.header.contains("config_hash") ||
         ck.header.at("config_hash").get<std::string>() != hash_hex(config_hash(cfg_))))
      throw IntegrityError("restore: checkpoint config does not match this run's config");
    phase_ = ck.header.at("phase").get<std::int64_t>();
    step_ = ck.header.at("step").get<std::int64_t>();
    d_updates_ = ck.header.at("d_updates").get<std::int64_t>();
    g_updates_ = ck.header.at("g_updates").get<std::int64_t>();
    patience_.restore(ck.header.at("has_best").get<bool>(),
                      ck.header.at("best_fid").get<double>(),
                      ck.header.at("no_improve").get<std::int64_t>());
    rng_noise_.deserialize(ck.header.at("rng_noise").get<std::string>());
    rng_sp_.deserialize(ck.header.at("rng_sp").get<std::string>());
    clf_accuracy_ = ck.header.at("classifier_accuracy").get<double>();

    const auto take = [&ck](const std::string& prefix) {
      std::map<std::string, Tensor> st;
      for (const auto& [k, t] : ck.tensors)
        if (k.rfind(prefix, 0) == 0) st.emplace(k.substr(prefix.size()), t);
      return st;
    };
    glh_->load_state_dict(take("glh."));
    ga_->load_state_dict(take("ga."));
    ex_->load_state_dict(take("ex."));
    d_->load_state_dict(take("d."));
    clf_->load_state_dict(take("clf."));
    opt_d_->load_state_dict(take("opt_d."));
    opt_glh_->load_state_dict(take("opt_glh."));
    opt_ga_->load_state_dict(take("opt_ga."));
    sampler_.load_state_dict(take("sampler."));

    // Re-derive the reference features with the restored classifier and
    // re-apply (or lift) the freeze that switch_phase installs.
    refresh_real_features();
    const bool freeze = phase_ == 2 && cfg_.train.freeze_glh;
    for (auto* p : glh_->params()) p->node()->requires_grad = !freeze;
  }

  // ---- accessors ----

  std::int64_t phase() const { return phase_; }
  std::int64_t step() const { return step_; }
  std::int64_t d_updates() const { return d_updates_; }
  std::int64_t g_updates() const { return g_updates_; }
  const PatienceTracker& patience() const { return patience_; }
  PatienceTracker& patience() { return patience_; }
  double classifier_accuracy() const { return clf_accuracy_; }
  ToyClassifier& classifier() { return *clf_; }
  const Tensor& real_features() const { return real_features_; }
  TransferGenerator& glh() { return *glh_; }
  SynthesisGenerator& ga() { return *ga_; }
  CtfExtractor& extractor() { return *ex_; }
  Discriminator& discriminator() { return *d_; }
  MixedBatchSampler& sampler() { return sampler_; }
  const RunConfig& config() const { return cfg_; }

  static std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

 private:
  // One adversarial round: `d_steps_per_g_step` discriminator updates,
  // then one generator update. Works for both phases; the phase picks
  // which generator produces fakes and which optimizer steps.
  LossRecord adversarial_step() {
    const auto t0 = std::chrono::steady_clock::now();
    double d_adv_sum = 0.0, sp_sum = 0.0;
    std::int64_t sp_terms = 0;

    for (std::int64_t k = 0; k < cfg_.train.d_steps_per_g_step; ++k) {
      const QualityTieredBatch batch = sampler_.next();
      const std::int64_t half = batch.hq_images.dim(0);
      std::vector<std::int64_t> targets = draw_targets(half);

      // Fakes are detached for the discriminator update.
      Tensor fakes;
      {
        NoGradGuard ng;
        fakes = make_fakes(batch, targets).value();
      }

      // Self-supervision pastes patches from the real HQ sub-batch onto a
      // fraction of both real and fake images.
      const std::vector<Tensor> pool = split_batch(batch.hq_images);
      const PastedBatch real_p =
          paste_batch_fraction(batch.hq_images, pool, cfg_.train.sp_fraction, rng_sp_);
      const PastedBatch fake_p =
          paste_batch_fraction(fakes, pool, cfg_.train.sp_fraction, rng_sp_);

      DiscOutput dr = d_->forward(ops::constant(real_p.images), batch.hq_labels);
      DiscOutput df = d_->forward(ops::constant(fake_p.images), targets);
      Var d_adv = ops::hinge_d_loss(dr.scores, df.scores);
      Var total = d_adv;

      double sp_val = 0.0;
      if (cfg_.train.lambda_sp > 0.0 && real_p.pasted_count + fake_p.pasted_count > 0) {
        Var sp = paste_loss_pair(dr, real_p, df, fake_p);
        sp_val = sp.value()[0];
        total = ops::add(total, ops::scale(sp, cfg_.train.lambda_sp));
        sp_sum += sp_val;
        ++sp_terms;
      }
      abort_if_not_finite(d_adv.value()[0], "discriminator loss");
      abort_if_not_finite(sp_val, "patch-location loss");

      opt_d_->zero_grad();
      backward(total);
      opt_d_->step();
      ++d_updates_;
      d_adv_sum += d_adv.value()[0];
    }

    // Generator update on a fresh batch of clean (un-pasted) fakes.
    const QualityTieredBatch batch = sampler_.next();
    const std::int64_t half = batch.hq_images.dim(0);
    std::vector<std::int64_t> targets = draw_targets(half);
    Var fake = make_fakes(batch, targets);
    DiscOutput df = d_->forward(fake, targets);
    Var g_loss = ops::hinge_g_loss(df.scores);
    abort_if_not_finite(g_loss.value()[0], "generator loss");

    Adam& g_opt = phase_ == 1 ? *opt_glh_ : *opt_ga_;
    g_opt.zero_grad();
    d_->zero_grad();  // gradients through D are discarded, not applied
    backward(g_loss);
    g_opt.step();
    ++g_updates_;
    ++step_;

    LossRecord rec;
    rec.d_adv = d_adv_sum / static_cast<double>(cfg_.train.d_steps_per_g_step);
    rec.g_adv = g_loss.value()[0];
    rec.sp = sp_terms > 0 ? sp_sum / static_cast<double>(sp_terms) : 0.0;
    rec.phase = phase_;
    rec.step = step_;
    rec.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    return rec;
  }

  // Fake batch for the current phase. Phase 1: transferred images from the
  // LQ sub-batch. Phase 2: synthesized images conditioned on the CTFs
  // extracted while transferring that same LQ sub-batch.
  Var make_fakes(const QualityTieredBatch& batch, const std::vector<std::int64_t>& targets) {
    const std::int64_t n = batch.lq_images.dim(0);
    auto out = glh_->forward(batch.lq_images, batch.lq_labels, targets,
                             glh_->draw_noises(n, rng_noise_));
    if (phase_ == 1) return out.image;
    auto ctfs = ex_->extract(out.trace);
    if (cfg_.train.ablate_ctfs) ctfs = zero_ctfs_like(ctfs);
    const Tensor z = rng_noise_.normal_tensor({n, cfg_.model.ga_noise_dim});
    return ga_->forward(z, ctfs, targets);
  }

  std::vector<std::int64_t> draw_targets(std::int64_t n) {
    std::vector<std::int64_t> t(static_cast<std::size_t>(n));
    for (auto& v : t) v = rng_noise_.below(cfg_.data.hq_classes);
    return t;
  }

  static std::vector<Tensor> split_batch(const Tensor& batch) {
    std::vector<Tensor> out;
    const std::int64_t n = batch.dim(0), chw = batch.numel() / batch.dim(0);
    out.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      Tensor one({batch.dim(1), batch.dim(2), batch.dim(3)});
      std::copy(batch.data() + i * chw, batch.data() + (i + 1) * chw, one.data());
      out.push_back(std::move(one));
    }
    return out;
  }

  // Patch-location loss over the pasted samples of both discriminator
  // passes, weighted by paste counts.
  Var paste_loss_pair(const DiscOutput& dr, const PastedBatch& real_p, const DiscOutput& df,
                      const PastedBatch& fake_p) {
    std::optional<Var> acc;
    std::int64_t total = 0;
    const auto add_side = [&](const DiscOutput& d, const PastedBatch& p) {
      if (p.pasted_count == 0) return;
      std::vector<std::int64_t> rows(static_cast<std::size_t>(p.pasted_count));
      for (std::int64_t i = 0; i < p.pasted_count; ++i) rows[static_cast<std::size_t>(i)] = i;
      Tensor target({p.pasted_count, 4});
      for (std::int64_t i = 0; i < p.pasted_count; ++i) {
        const Tensor t = p.annotations[static_cast<std::size_t>(i)]->as_tensor();
        std::copy(t.data(), t.data() + 4, target.data() + i * 4);
      }
      Var side = ops::scale(sp_loss(ops::rows_select(d.bbox, rows), target),
                            static_cast<double>(p.pasted_count));
      acc = acc ? ops::add(*acc, side) : side;
      total += p.pasted_count;
    };
    add_side(dr, real_p);
    add_side(df, fake_p);
    return ops::scale(*acc, 1.0 / static_cast<double>(total));
  }

  void abort_if_not_finite(double v, const std::string& what) {
    if (!std::isfinite(v))
      throw TrainingAbort("non-finite " + what + " at phase " + std::to_string(phase_) +
                          " step " + std::to_string(step_ + 1));
  }

  RunConfig cfg_;
  const Dataset* hq_;
  const Dataset* lq_;
  RngStream rng_noise_;
  RngStream rng_sp_;
  MixedBatchSampler sampler_;
  PatienceTracker patience_;

  std::unique_ptr<TransferGenerator> glh_;
  std::unique_ptr<CtfExtractor> ex_;
  std::unique_ptr<SynthesisGenerator> ga_;
  std::unique_ptr<Discriminator> d_;
  std::unique_ptr<ToyClassifier> clf_;
  std::unique_ptr<Adam> opt_d_, opt_glh_, opt_ga_;

  Tensor real_features_;
  double clf_accuracy_ = 0.0;
  std::int64_t phase_ = 1;
  std::int64_t step_ = 0;  // within the current phase
  std::int64_t d_updates_ = 0;
  std::int64_t g_updates_ = 0;
};

// ---- run orchestration: metrics stream, checkpoints, the phase loop ----

namespace detail {

inline nlohmann::json loss_record_json(const LossRecord& r) {
  return {{"type", "loss"}, {"phase", r.phase}, {"step", r.step},
          {"d_adv", r.d_adv}, {"g_adv", r.g_adv}, {"sp", r.sp}};
}

inline nlohmann::json eval_record_json(const EvalReport& r) {
  return {{"type", "eval"},
          {"phase", r.phase},
          {"step", r.step},
          {"fid", r.fid},
          {"is_mean", r.is_mean},
          {"is_std", r.is_std},
          {"n_samples", r.n_samples},
          {"classifier_fingerprint", Trainer::hash_hex(r.classifier_fingerprint)}};
}

}  // namespace detail

// Appends structured records to the run's metrics stream. Wall-clock times
// go to a separate timing sidecar so the metrics stream itself is
// bit-reproducible across runs with the same seed.
class RunLog {
 public:
  explicit RunLog(const std::filesystem::path& out_dir)
      : metrics_path_(out_dir / "metrics.ndjson"), timing_path_(out_dir / "timing.ndjson") {
    std::filesystem::create_directories(out_dir);
  }

  void append(const nlohmann::json& record) { append_line(metrics_path_, record.dump()); }

  void append_timing(const LossRecord& r) {
    append_line(timing_path_, nlohmann::json{{"phase", r.phase},
                                             {"step", r.step},
                                             {"wall_ms", r.wall_ms}}
                                  .dump());
  }

  // On resume, drop records from beyond the checkpoint so the stream reads
  // as one uninterrupted run.
  void truncate_after(std::int64_t phase, std::int64_t step) {
    if (!std::filesystem::exists(metrics_path_)) return;
    const std::string text = read_file_bytes(metrics_path_);
    std::string kept;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) continue;
      const std::int64_t p = j.value("phase", std::int64_t{0});
      const std::int64_t s = j.value("step", std::int64_t{0});
      if (p < phase || (p == phase && s <= step)) kept += line + "\n";
    }
    atomic_write_bytes(metrics_path_, kept);
    std::filesystem::remove(timing_path_);  // timings are not reproducible state
  }

  const std::filesystem::path& metrics_path() const { return metrics_path_; }

 private:
  static void append_line(const std::filesystem::path& path, const std::string& line) {
    std::ofstream f(path, std::ios::app | std::ios::binary);
    if (!f) throw IoError("cannot append to " + path.string());
    f << line << "\n";
    f.flush();
    if (!f) throw IoError("write failed on " + path.string());
  }

  std::filesystem::path metrics_path_;
  std::filesystem::path timing_path_;
};

struct RunResult {
  std::optional<EvalReport> final_report;
  std::int64_t phase1_steps = 0;
  std::int64_t phase2_steps = 0;
  std::filesystem::path final_checkpoint;
};

// Full two-phase run with metrics, periodic checkpoints and the phase-1
// patience switch. `resume_from` continues an interrupted run.
inline RunResult run_training(Trainer& trainer, const RunConfig& cfg,
                              const std::optional<std::filesystem::path>& resume_from = {}) {
  const std::filesystem::path out(cfg.out_dir);
  const std::filesystem::path ck_dir = out / "checkpoints";
  std::filesystem::create_directories(ck_dir);
  RunLog log(out);

  if (resume_from) {
    trainer.restore(load_checkpoint(*resume_from));
    log.truncate_after(trainer.phase(), trainer.step());
  } else {
    save_checkpoint(ck_dir / "initial.bin", trainer.snapshot());
    log.append({{"type", "run_start"},
                {"phase", trainer.phase()},
                {"step", trainer.step()},
                {"config_hash", Trainer::hash_hex(config_hash(cfg))},
                {"classifier_fingerprint",
                 Trainer::hash_hex(trainer.classifier().fingerprint())},
                {"classifier_accuracy", trainer.classifier_accuracy()}});
  }

  const auto checkpoint_now = [&](const std::string& name) {
    const auto path = ck_dir / name;
    save_checkpoint(path, trainer.snapshot());
    save_checkpoint(ck_dir / "latest.bin", trainer.snapshot());
    return path;
  };

  RunResult result;
  try {
  // ---- phase 1 ----
  if (trainer.phase() == 1) {
    // A resumed checkpoint may already carry a due switch.
    bool switch_now = trainer.patience().due();
    while (!switch_now && trainer.step() < cfg.train.phase1_max_steps) {
      const LossRecord rec = trainer.phase1_step();
      log.append(detail::loss_record_json(rec));
      log.append_timing(rec);
      if (trainer.step() % cfg.train.eval_every == 0) {
        const EvalReport ev = trainer.evaluate("p1-" + std::to_string(trainer.step()));
        log.append(detail::eval_record_json(ev));
        switch_now = trainer.patience().record(ev.fid);
      }
      if (trainer.step() % cfg.train.checkpoint_every == 0)
        checkpoint_now("p1_s" + std::to_string(trainer.step()) + ".bin");
    }
    result.phase1_steps = trainer.step();
    log.append({{"type", "phase_switch"},
                {"phase", 1},
                {"step", trainer.step()},
                {"best_fid", trainer.patience().has_best() ? trainer.patience().best() : -1.0}});
    trainer.switch_phase();
    checkpoint_now("phase_switch.bin");
  }

  // ---- phase 2 ----
  while (trainer.step() < cfg.train.phase2_max_steps) {
    const LossRecord rec = trainer.phase2_step();
    log.append(detail::loss_record_json(rec));
    log.append_timing(rec);
    if (trainer.step() % cfg.train.eval_every == 0) {
      const EvalReport ev = trainer.evaluate("p2-" + std::to_string(trainer.step()));
      log.append(detail::eval_record_json(ev));
    }
    if (trainer.step() % cfg.train.checkpoint_every == 0)
      checkpoint_now("p2_s" + std::to_string(trainer.step()) + ".bin");
  }
  result.phase2_steps = trainer.step();
  } catch (const TrainingAbort& e) {
    log.append({{"type", "abort"},
                {"phase", trainer.phase()},
                {"step", trainer.step()},
                {"reason", std::string(e.what())}});
    throw;
  }

  // ---- final artifacts ----
  if (cfg.train.phase1_max_steps > 0 || cfg.train.phase2_max_steps > 0) {
    const EvalReport ev = trainer.evaluate("final");
    log.append(detail::eval_record_json(ev));
    result.final_report = ev;

    RngStream grid_rng(cfg.seed, "eval-final");
    const std::int64_t gn = std::min<std::int64_t>(16, cfg.train.eval_samples);
    const Tensor grid_images = trainer.generate(gn, 0, grid_rng);
    const std::int64_t cols = gn % 4 == 0 ? 4 : gn;
    emit_sample_grid(grid_images, out / "final_grid.png", gn / cols, cols);

    nlohmann::json report = detail::eval_record_json(ev);
    report["type"] = "final_report";
    atomic_write_bytes(out / "report.json", report.dump(2) + "\n");
  }
  result.final_checkpoint = checkpoint_now("final.bin");
  return result;
}

}  // namespace ctfgan
