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

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "ctfgan/errors.hpp"
#include "ctfgan/rng.hpp"
#include "ctfgan/serialize.hpp"

namespace ctfgan {

struct DataConfig {
  std::string root;
  std::string hq_manifest;
  std::string lq_manifest;  // empty: derive LQ by downsampling the HQ corpus
  std::int64_t hq_classes = 2;
  std::int64_t lq_classes = 2;
  std::int64_t hq_resolution = 32;
};

struct ModelConfig {
  std::int64_t blocks = 2;
  std::vector<std::int64_t> glh_widths{16, 16};
  std::int64_t glh_stem = 16;
  std::int64_t glh_noise_dim = 8;
  std::vector<std::int64_t> ga_widths{16, 16};
  std::int64_t ga_base = 16;
  std::int64_t ga_noise_dim = 16;
  std::int64_t embed_dim = 16;
  std::int64_t d_base = 16;
  bool ga_conditional_norm = false;
};

struct TrainSection {
  double lr = 2e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  std::int64_t batch_size = 16;
  std::int64_t d_steps_per_g_step = 5;
  double lambda_sp = 0.5;
  double sp_fraction = 0.5;
  std::int64_t phase1_max_steps = 200;
  std::int64_t phase2_max_steps = 200;
  std::int64_t patience = 5;
  double improvement_threshold = 0.01;
  std::int64_t eval_every = 50;
  std::int64_t eval_samples = 64;
  std::int64_t checkpoint_every = 100;
  bool freeze_glh = true;
  bool ablate_ctfs = false;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir;
  DataConfig data;
  ModelConfig model;
  TrainSection train;

  std::int64_t lq_resolution() const {
    std::int64_t r = data.hq_resolution;
    for (std::int64_t i = 0; i < model.blocks; ++i) r /= 2;
    return r;
  }
};

namespace detail {

// Strict reader over one JSON object level: every fetch marks its key as
// consumed, and finish() reports keys nobody asked for.
class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string prefix, std::vector<std::string>* issues)
      : j_(j), prefix_(std::move(prefix)), issues_(issues) {
    if (!j_.is_object()) {
      issues_->push_back(label("") + ": expected an object");
      ok_ = false;
    }
  }

  bool has(const std::string& key) const { return ok_ && j_.contains(key); }

  const nlohmann::json* get(const std::string& key) {
    if (!ok_) return nullptr;
    seen_.push_back(key);
    if (!j_.contains(key)) return nullptr;
    return &j_.at(key);
  }

  void require(const std::string& key) {
    if (ok_ && !j_.contains(key)) issues_->push_back(label(key) + ": required key missing");
  }

  template <typename T>
  void read_int(const std::string& key, T& out, std::int64_t lo, std::int64_t hi) {
    const auto* v = get(key);
    if (!v) return;
    if (!v->is_number_integer() && !v->is_number_unsigned()) {
      issues_->push_back(label(key) + ": expected an integer");
      return;
    }
    const std::int64_t x = v->get<std::int64_t>();
    if (x < lo || x > hi) {
      issues_->push_back(label(key) + ": value " + std::to_string(x) + " outside [" +
                         std::to_string(lo) + ", " + std::to_string(hi) + "]");
      return;
    }
    out = static_cast<T>(x);
  }

  void read_real(const std::string& key, double& out, double lo, double hi) {
    const auto* v = get(key);
    if (!v) return;
    if (!v->is_number()) {
      issues_->push_back(label(key) + ": expected a number");
      return;
    }
    const double x = v->get<double>();
    if (!(x >= lo && x <= hi)) {
      issues_->push_back(label(key) + ": value " + std::to_string(x) + " outside [" +
                         std::to_string(lo) + ", " + std::to_string(hi) + "]");
      return;
    }
    out = x;
  }

  void read_bool(const std::string& key, bool& out) {
    const auto* v = get(key);
    if (!v) return;
    if (!v->is_boolean()) {
      issues_->push_back(label(key) + ": expected a boolean");
      return;
    }
    out = v->get<bool>();
  }

  void read_string(const std::string& key, std::string& out) {
    const auto* v = get(key);
    if (!v) return;
    if (!v->is_string()) {
      issues_->push_back(label(key) + ": expected a string");
      return;
    }
    out = v->get<std::string>();
  }

  void read_int_array(const std::string& key, std::vector<std::int64_t>& out,
                      std::int64_t lo) {
    const auto* v = get(key);
    if (!v) return;
    if (!v->is_array()) {
      issues_->push_back(label(key) + ": expected an array of integers");
      return;
    }
    std::vector<std::int64_t> vals;
    for (const auto& e : *v) {
      if (!e.is_number_integer() && !e.is_number_unsigned()) {
        issues_->push_back(label(key) + ": expected an array of integers");
        return;
      }
      const std::int64_t x = e.get<std::int64_t>();
      if (x < lo) {
        issues_->push_back(label(key) + ": element " + std::to_string(x) + " below " +
                           std::to_string(lo));
        return;
      }
      vals.push_back(x);
    }
    out = std::move(vals);
  }

  void finish() {
    if (!ok_) return;
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      bool known = false;
      for (const auto& s : seen_)
        if (s == it.key()) {
          known = true;
          break;
        }
      if (!known) issues_->push_back(label(it.key()) + ": unknown key");
    }
  }

  std::string label(const std::string& key) const {
    if (key.empty()) return prefix_.empty() ? "<root>" : prefix_;
    return prefix_.empty() ? key : prefix_ + "." + key;
  }

  bool ok() const { return ok_; }
  const nlohmann::json& json() const { return j_; }

 private:
  const nlohmann::json& j_;
  std::string prefix_;
  std::vector<std::string>* issues_;
  std::vector<std::string> seen_;
  bool ok_ = true;
};

inline bool is_power_of_two(std::int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace detail

// Parses and validates a run configuration, collecting every violation
// (unknown keys, wrong types, out-of-range values, cross-field rules)
// before failing, so one error report lists the full repair set.
inline RunConfig parse_run_config(const nlohmann::json& j) {
  std::vector<std::string> issues;
  RunConfig cfg;

  detail::StrictObject root(j, "", &issues);
  root.require("out_dir");
  {
    const auto* v = root.get("seed");
    if (v) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0))
        issues.push_back("seed: expected a non-negative integer");
      else
        cfg.seed = v->get<std::uint64_t>();
    }
  }
  root.read_string("out_dir", cfg.out_dir);
  if (root.has("out_dir") && cfg.out_dir.empty())
    issues.push_back("out_dir: must not be empty");

  if (const auto* d = root.get("data")) {
    detail::StrictObject data(*d, "data", &issues);
    data.require("root");
    data.require("hq_manifest");
    data.read_string("root", cfg.data.root);
    data.read_string("hq_manifest", cfg.data.hq_manifest);
    data.read_string("lq_manifest", cfg.data.lq_manifest);
    data.read_int("hq_classes", cfg.data.hq_classes, 1, 1'000'000);
    data.read_int("lq_classes", cfg.data.lq_classes, 1, 1'000'000);
    data.read_int("hq_resolution", cfg.data.hq_resolution, 8, 4096);
    data.finish();
  } else {
    issues.push_back("data: required key missing");
  }

  if (const auto* m = root.get("model")) {
    detail::StrictObject model(*m, "model", &issues);
    model.read_int("blocks", cfg.model.blocks, 1, 8);
    model.read_int_array("glh_widths", cfg.model.glh_widths, 1);
    model.read_int("glh_stem", cfg.model.glh_stem, 1, 4096);
    model.read_int("glh_noise_dim", cfg.model.glh_noise_dim, 1, 4096);
    model.read_int_array("ga_widths", cfg.model.ga_widths, 1);
    model.read_int("ga_base", cfg.model.ga_base, 1, 4096);
    model.read_int("ga_noise_dim", cfg.model.ga_noise_dim, 1, 4096);
    model.read_int("embed_dim", cfg.model.embed_dim, 1, 4096);
    model.read_int("d_base", cfg.model.d_base, 1, 4096);
    model.read_bool("ga_conditional_norm", cfg.model.ga_conditional_norm);
    model.finish();
  }

  if (const auto* t = root.get("train")) {
    detail::StrictObject train(*t, "train", &issues);
    train.read_real("lr", cfg.train.lr, 1e-12, 1.0);
    train.read_real("beta1", cfg.train.beta1, 0.0, 0.9999);
    train.read_real("beta2", cfg.train.beta2, 0.0, 0.9999);
    train.read_int("batch_size", cfg.train.batch_size, 2, 4096);
    train.read_int("d_steps_per_g_step", cfg.train.d_steps_per_g_step, 1, 64);
    train.read_real("lambda_sp", cfg.train.lambda_sp, 0.0, 1e6);
    train.read_real("sp_fraction", cfg.train.sp_fraction, 0.0, 1.0);
    train.read_int("phase1_max_steps", cfg.train.phase1_max_steps, 0, 10'000'000);
    train.read_int("phase2_max_steps", cfg.train.phase2_max_steps, 0, 10'000'000);
    train.read_int("patience", cfg.train.patience, 1, 1'000'000);
    train.read_real("improvement_threshold", cfg.train.improvement_threshold, 0.0, 1.0);
    train.read_int("eval_every", cfg.train.eval_every, 1, 10'000'000);
    train.read_int("eval_samples", cfg.train.eval_samples, 2, 1'000'000);
    train.read_int("checkpoint_every", cfg.train.checkpoint_every, 1, 10'000'000);
    train.read_bool("freeze_glh", cfg.train.freeze_glh);
    train.read_bool("ablate_ctfs", cfg.train.ablate_ctfs);
    train.finish();
  }
  root.finish();

  // Cross-field rules, only meaningful once the pieces parsed.
  if (!detail::is_power_of_two(cfg.data.hq_resolution))
    issues.push_back("data.hq_resolution: must be a power of two");
  if (cfg.model.glh_widths.size() != static_cast<std::size_t>(cfg.model.blocks))
    issues.push_back("model.glh_widths: need exactly model.blocks (" +
                     std::to_string(cfg.model.blocks) + ") entries, got " +
                     std::to_string(cfg.model.glh_widths.size()));
  if (cfg.model.ga_widths.size() != static_cast<std::size_t>(cfg.model.blocks))
    issues.push_back("model.ga_widths: need exactly model.blocks (" +
                     std::to_string(cfg.model.blocks) + ") entries, got " +
                     std::to_string(cfg.model.ga_widths.size()));
  std::int64_t lq_res = cfg.data.hq_resolution;
  for (std::int64_t i = 0; i < cfg.model.blocks; ++i) lq_res /= 2;
  if (lq_res < 2)
    issues.push_back("model.blocks: 2^blocks exceeds data.hq_resolution / 2");
  if (cfg.train.batch_size % 2 != 0)
    issues.push_back("train.batch_size: equal HQ/LQ split needs an even value");
  if (cfg.data.hq_resolution < 8)
    issues.push_back("data.hq_resolution: surrogate evaluation needs at least 8");

  if (!issues.empty()) throw ValidationError(std::move(issues));
  return cfg;
}

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["data"] = {{"root", c.data.root},
               {"hq_manifest", c.data.hq_manifest},
               {"lq_manifest", c.data.lq_manifest},
               {"hq_classes", c.data.hq_classes},
               {"lq_classes", c.data.lq_classes},
               {"hq_resolution", c.data.hq_resolution}};
  j["model"] = {{"blocks", c.model.blocks},
                {"glh_widths", c.model.glh_widths},
                {"glh_stem", c.model.glh_stem},
                {"glh_noise_dim", c.model.glh_noise_dim},
                {"ga_widths", c.model.ga_widths},
                {"ga_base", c.model.ga_base},
                {"ga_noise_dim", c.model.ga_noise_dim},
                {"embed_dim", c.model.embed_dim},
                {"d_base", c.model.d_base},
                {"ga_conditional_norm", c.model.ga_conditional_norm}};
  j["train"] = {{"lr", c.train.lr},
                {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},
                {"batch_size", c.train.batch_size},
                {"d_steps_per_g_step", c.train.d_steps_per_g_step},
                {"lambda_sp", c.train.lambda_sp},
                {"sp_fraction", c.train.sp_fraction},
                {"phase1_max_steps", c.train.phase1_max_steps},
                {"phase2_max_steps", c.train.phase2_max_steps},
                {"patience", c.train.patience},
                {"improvement_threshold", c.train.improvement_threshold},
                {"eval_every", c.train.eval_every},
                {"eval_samples", c.train.eval_samples},
                {"checkpoint_every", c.train.checkpoint_every},
                {"freeze_glh", c.train.freeze_glh},
                {"ablate_ctfs", c.train.ablate_ctfs}};
  return j;
}

// Hash of the fully resolved config (defaults included). nlohmann objects
// serialize with sorted keys, so the dump is canonical. The output
// directory is excluded: it does not affect computation, and a run moved
// to a new directory must still resume from its own checkpoints.
inline std::uint64_t config_hash(const RunConfig& c) {
  nlohmann::json j = run_config_to_json(c);
  j.erase("out_dir");
  const std::string s = j.dump();
  return fnv1a64(s.data(), s.size());
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  const std::string text = read_file_bytes(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError({std::string("config is not valid JSON: ") + e.what()});
  }
  return parse_run_config(j);
}

}  // namespace ctfgan
