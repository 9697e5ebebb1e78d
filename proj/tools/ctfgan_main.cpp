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

// ctfgan: train, sample from, evaluate and inspect the two-generator
// adversarial pipeline. One subcommand per process; everything structural
// lives in the JSON config, flags cover paths and small overrides.
//
// Exit codes: 0 success, 1 validation error, 2 runtime abort, 3 I/O error.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "ctfgan/train.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntimeAbort = 2;
constexpr int kExitIo = 3;

struct LoadedData {
  ctfgan::Dataset hq;
  ctfgan::Dataset lq;
};

fs::path resolve_under(const std::string& root, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : fs::path(root) / path;
}

// HQ always comes from its manifest; LQ either from its own manifest or,
// when none is configured, by area-averaging the HQ corpus down to the
// transfer generator's input resolution.
LoadedData load_datasets(const ctfgan::RunConfig& cfg) {
  LoadedData d;
  d.hq = ctfgan::load_corpus(cfg.data.root,
                             resolve_under(cfg.data.root, cfg.data.hq_manifest), "hq",
                             cfg.data.hq_classes);
  if (cfg.data.lq_manifest.empty()) {
    const std::int64_t factor = cfg.data.hq_resolution / cfg.lq_resolution();
    d.lq = ctfgan::make_lq_from_hq(d.hq, factor);
  } else {
    d.lq = ctfgan::load_corpus(cfg.data.root,
                               resolve_under(cfg.data.root, cfg.data.lq_manifest), "lq",
                               cfg.data.lq_classes);
  }
  return d;
}

ctfgan::RunConfig config_from_checkpoint(const ctfgan::Checkpoint& ck,
                                         const std::string& config_override) {
  if (!config_override.empty()) return ctfgan::load_run_config(config_override);
  if (!ck.header.contains("config"))
    throw ctfgan::IntegrityError("checkpoint carries no embedded config");
  return ctfgan::parse_run_config(ck.header.at("config"));
}

nlohmann::json report_json(const ctfgan::EvalReport& r) {
  return {{"fid", r.fid},
          {"is_mean", r.is_mean},
          {"is_std", r.is_std},
          {"n_samples", r.n_samples},
          {"phase", r.phase},
          {"step", r.step},
          {"classifier_fingerprint", ctfgan::Trainer::hash_hex(r.classifier_fingerprint)}};
}

int cmd_train(const std::string& config_path, const std::string& resume_path) {
  const ctfgan::RunConfig cfg = ctfgan::load_run_config(config_path);
  LoadedData data = load_datasets(cfg);
  ctfgan::Trainer trainer(cfg, &data.hq, &data.lq);
  std::optional<fs::path> resume;
  if (!resume_path.empty()) resume = fs::path(resume_path);
  const ctfgan::RunResult res = ctfgan::run_training(trainer, cfg, resume);

  nlohmann::json out = {{"out_dir", cfg.out_dir},
                        {"phase1_steps", res.phase1_steps},
                        {"phase2_steps", res.phase2_steps},
                        {"final_checkpoint", res.final_checkpoint.string()}};
  if (res.final_report) out["final_report"] = report_json(*res.final_report);
  std::cout << out.dump(2) << "\n";
  return kExitOk;
}

int cmd_sample(const std::string& ck_path, const std::string& config_override,
               const std::string& out_path, std::int64_t count, std::uint64_t seed) {
  if (count < 1) throw ctfgan::ValidationError({"--count must be at least 1"});
  const ctfgan::Checkpoint ck = ctfgan::load_checkpoint(ck_path);
  const ctfgan::RunConfig cfg = config_from_checkpoint(ck, config_override);
  LoadedData data = load_datasets(cfg);
  ctfgan::Trainer trainer(cfg, &data.hq, &data.lq);
  trainer.restore(ck);

  ctfgan::RngStream rng(seed, "sample");
  const ctfgan::Tensor images = trainer.generate(count, 0, rng);
  std::int64_t rows = 1;
  for (std::int64_t d = static_cast<std::int64_t>(std::sqrt(static_cast<double>(count)));
       d >= 1; --d)
    if (count % d == 0) {
      rows = d;
      break;
    }
  ctfgan::emit_sample_grid(images, out_path, rows, count / rows);
  std::cout << nlohmann::json{{"out", out_path},
                              {"count", count},
                              {"rows", rows},
                              {"cols", count / rows},
                              {"phase", trainer.phase()}}
                   .dump(2)
            << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& ck_path, const std::string& config_override,
             const std::string& out_path) {
  const ctfgan::Checkpoint ck = ctfgan::load_checkpoint(ck_path);
  const ctfgan::RunConfig cfg = config_from_checkpoint(ck, config_override);
  LoadedData data = load_datasets(cfg);
  ctfgan::Trainer trainer(cfg, &data.hq, &data.lq);
  trainer.restore(ck);

  const ctfgan::EvalReport rep = trainer.evaluate("final");
  const nlohmann::json j = report_json(rep);
  if (!out_path.empty()) ctfgan::atomic_write_bytes(out_path, j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return kExitOk;
}

int cmd_extract_ctf(const std::string& ck_path, const std::string& image_path,
                    std::int64_t lq_label, std::int64_t target_class, std::uint64_t seed,
                    const std::string& out_path) {
  const ctfgan::Checkpoint ck = ctfgan::load_checkpoint(ck_path);
  const ctfgan::RunConfig cfg = config_from_checkpoint(ck, "");
  if (target_class < 0 || target_class >= cfg.data.hq_classes)
    throw ctfgan::ValidationError({"target class " + std::to_string(target_class) +
                                   " out of range [0, " +
                                   std::to_string(cfg.data.hq_classes - 1) + "]"});
  if (lq_label < 0 || lq_label >= cfg.data.lq_classes)
    throw ctfgan::ValidationError({"lq label " + std::to_string(lq_label) +
                                   " out of range [0, " +
                                   std::to_string(cfg.data.lq_classes - 1) + "]"});

  // Only the transfer generator and the extractor are needed; build them
  // directly rather than standing up a full trainer.
  ctfgan::RngStream rng_init(cfg.seed, "init");
  ctfgan::GlhConfig glh_cfg;
  glh_cfg.num_hq_classes = cfg.data.hq_classes;
  glh_cfg.num_lq_classes = cfg.data.lq_classes;
  glh_cfg.lq_resolution = cfg.lq_resolution();
  glh_cfg.stem_channels = cfg.model.glh_stem;
  glh_cfg.widths = cfg.model.glh_widths;
  glh_cfg.noise_dim = cfg.model.glh_noise_dim;
  ctfgan::TransferGenerator glh(glh_cfg, rng_init);
  ctfgan::CtfExtractor ex(cfg.model.glh_widths, cfg.data.lq_classes, cfg.model.embed_dim,
                          rng_init);
  const auto take = [&ck](const std::string& prefix) {
    std::map<std::string, ctfgan::Tensor> st;
    for (const auto& [k, t] : ck.tensors)
      if (k.rfind(prefix, 0) == 0) st.emplace(k.substr(prefix.size()), t);
    return st;
  };
  glh.load_state_dict(take("glh."));
  ex.load_state_dict(take("ex."));

  const ctfgan::Image img = ctfgan::load_image(image_path);
  if (img.height != cfg.lq_resolution() || img.width != cfg.lq_resolution())
    throw ctfgan::ValidationError(
        {"input image is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
         ", transfer generator expects " + std::to_string(cfg.lq_resolution()) + "x" +
         std::to_string(cfg.lq_resolution())});
  const ctfgan::Tensor one = ctfgan::image_to_tensor(img);
  ctfgan::Tensor batch({1, 3, img.height, img.width});
  std::copy(one.data(), one.data() + one.numel(), batch.data());

  ctfgan::NoGradGuard ng;
  ctfgan::RngStream rng(seed, "extract");
  const auto out = glh.forward(batch, {lq_label}, {target_class}, glh.draw_noises(1, rng));
  const auto ctfs = ex.extract(out.trace);

  ctfgan::Checkpoint bundle;
  bundle.header["format"] = "ctfgan-ctf";
  bundle.header["version"] = ctfgan::kCheckpointVersion;
  bundle.header["source_image"] = image_path;
  bundle.header["lq_label"] = lq_label;
  bundle.header["target_class"] = target_class;
  bundle.header["seed"] = seed;
  nlohmann::json manifest = nlohmann::json::array();
  for (std::size_t m = 0; m < ctfs.size(); ++m) {
    const ctfgan::Tensor& maps = ctfs[m].maps.value();
    manifest.push_back({{"block", ctfs[m].block_index},
                        {"shape", maps.shape()},
                        {"t_channels", ctfs[m].t_channels},
                        {"e_channels", ctfs[m].e_channels}});
    bundle.tensors["ctf." + std::to_string(m)] = maps;
  }
  bundle.header["blocks"] = manifest;
  ctfgan::save_checkpoint(out_path, bundle);
  std::cout << nlohmann::json{{"out", out_path}, {"blocks", manifest}}.dump(2) << "\n";
  return kExitOk;
}

int cmd_validate_data(const std::string& root, const std::string& manifest,
                      const std::string& tier, std::int64_t classes) {
  const ctfgan::Dataset ds =
      ctfgan::load_corpus(root, resolve_under(root, manifest), tier, classes);
  std::cout << nlohmann::json{{"samples", ds.size()},
                              {"resolution", ds.resolution},
                              {"classes", ds.num_classes},
                              {"tier", tier}}
                   .dump(2)
            << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ctfgan: conditional feature transfer GAN pipeline"};
  app.require_subcommand(1);

  std::string config_path, resume_path;
  auto* train = app.add_subcommand("train", "run the two-phase training pipeline");
  train->add_option("--config", config_path, "run config JSON")->required();
  train->add_option("--resume", resume_path, "checkpoint to continue from");

  std::string s_ck, s_cfg, s_out = "samples.png";
  std::int64_t s_count = 16;
  std::uint64_t s_seed = 0;
  auto* sample = app.add_subcommand("sample", "write a grid of generated images");
  sample->add_option("--checkpoint", s_ck, "trained checkpoint")->required();
  sample->add_option("--config", s_cfg, "config override (defaults to embedded)");
  sample->add_option("--out", s_out, "output PNG path");
  sample->add_option("--count", s_count, "number of images");
  sample->add_option("--seed", s_seed, "sampling noise seed");

  std::string e_ck, e_cfg, e_out;
  auto* evalc = app.add_subcommand("eval", "recompute the surrogate evaluation report");
  evalc->add_option("--checkpoint", e_ck, "trained checkpoint")->required();
  evalc->add_option("--config", e_cfg, "config override (defaults to embedded)");
  evalc->add_option("--out", e_out, "also write the report JSON here");

  std::string x_ck, x_img, x_out = "ctfs.bin";
  std::int64_t x_label = 0, x_class = 0;
  std::uint64_t x_seed = 0;
  auto* extract = app.add_subcommand(
      "extract-ctf", "run the transfer generator on one image and save its features");
  extract->add_option("--checkpoint", x_ck, "trained checkpoint")->required();
  extract->add_option("--image", x_img, "low-quality input image")->required();
  extract->add_option("--lq-label", x_label, "class of the input image");
  extract->add_option("--class", x_class, "target class to condition on");
  extract->add_option("--seed", x_seed, "noise seed");
  extract->add_option("--out", x_out, "output bundle path");

  std::string v_root, v_manifest, v_tier = "hq";
  std::int64_t v_classes = 2;
  auto* validate = app.add_subcommand("validate-data", "check a corpus without mutating it");
  validate->add_option("--root", v_root, "dataset root directory")->required();
  validate->add_option("--manifest", v_manifest, "manifest TSV path")->required();
  validate->add_option("--tier", v_tier, "expected tier tag");
  validate->add_option("--classes", v_classes, "label space size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*train) return cmd_train(config_path, resume_path);
    if (*sample) return cmd_sample(s_ck, s_cfg, s_out, s_count, s_seed);
    if (*evalc) return cmd_eval(e_ck, e_cfg, e_out);
    if (*extract) return cmd_extract_ctf(x_ck, x_img, x_label, x_class, x_seed, x_out);
    if (*validate) return cmd_validate_data(v_root, v_manifest, v_tier, v_classes);
  } catch (const ctfgan::ValidationError& e) {
    std::cerr << "validation error:\n" << e.what() << "\n";
    return kExitValidation;
  } catch (const ctfgan::TrainingAbort& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return kExitRuntimeAbort;
  } catch (const ctfgan::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ctfgan::IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ctfgan::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ctfgan::LabelDomainError& e) {
    std::cerr << "label error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ctfgan::ContractError& e) {
    std::cerr << "invalid request: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return kExitRuntimeAbort;
  }
  return kExitOk;
}
