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

#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>

#include "ctfgan/config.hpp"

namespace {

nlohmann::json minimal_config() {
  return nlohmann::json{
      {"out_dir", "/tmp/run"},
      {"data", {{"root", "/tmp/data"}, {"hq_manifest", "hq.tsv"}}},
  };
}

std::string issues_text(const ctfgan::ValidationError& e) {
  std::string all;
  for (const auto& line : e.issues()) all += line + "\n";
  return all;
}

}  // namespace

TEST_CASE("minimal config parses and fills documented defaults") {
  const ctfgan::RunConfig cfg = ctfgan::parse_run_config(minimal_config());
  CHECK(cfg.seed == 0);
  CHECK(cfg.out_dir == "/tmp/run");
  CHECK(cfg.data.root == "/tmp/data");
  CHECK(cfg.data.hq_manifest == "hq.tsv");
  CHECK(cfg.data.lq_manifest.empty());
  CHECK(cfg.data.hq_classes == 2);
  CHECK(cfg.data.hq_resolution == 32);
  CHECK(cfg.model.blocks == 2);
  CHECK(cfg.model.glh_widths == std::vector<std::int64_t>{16, 16});
  CHECK(cfg.train.lr == Catch::Approx(2e-4));
  CHECK(cfg.train.beta1 == 0.0);
  CHECK(cfg.train.beta2 == Catch::Approx(0.9));
  CHECK(cfg.train.batch_size == 16);
  CHECK(cfg.train.d_steps_per_g_step == 5);
  CHECK(cfg.train.lambda_sp == Catch::Approx(0.5));
  CHECK(cfg.train.sp_fraction == Catch::Approx(0.5));
  CHECK(cfg.train.freeze_glh);
  CHECK_FALSE(cfg.train.ablate_ctfs);
  CHECK(cfg.lq_resolution() == 8);
}

TEST_CASE("missing required keys are all reported") {
  try {
    ctfgan::parse_run_config(nlohmann::json{{"data", nlohmann::json::object()}});
    FAIL("expected ValidationError");
  } catch (const ctfgan::ValidationError& e) {
    const std::string all = issues_text(e);
    CHECK(all.find("out_dir") != std::string::npos);
    CHECK(all.find("data.root") != std::string::npos);
    CHECK(all.find("data.hq_manifest") != std::string::npos);
  }
}

TEST_CASE("unknown keys are rejected with their dotted path") {
  auto j = minimal_config();
  j["train"] = {{"lerning_rate", 0.1}};
  j["bogus"] = 1;
  try {
    ctfgan::parse_run_config(j);
    FAIL("expected ValidationError");
  } catch (const ctfgan::ValidationError& e) {
    const std::string all = issues_text(e);
    CHECK(all.find("train.lerning_rate: unknown key") != std::string::npos);
    CHECK(all.find("bogus: unknown key") != std::string::npos);
  }
}

TEST_CASE("negative learning rate is rejected by name") {
  auto j = minimal_config();
  j["train"] = {{"lr", -0.001}};
  try {
    ctfgan::parse_run_config(j);
    FAIL("expected ValidationError");
  } catch (const ctfgan::ValidationError& e) {
    CHECK(issues_text(e).find("train.lr") != std::string::npos);
  }
}

TEST_CASE("type and range violations are collected together") {
  auto j = minimal_config();
  j["train"] = {{"batch_size", 3}, {"beta1", 1.5}};
  j["data"]["hq_resolution"] = 48;  // in range but not a power of two
  try {
    ctfgan::parse_run_config(j);
    FAIL("expected ValidationError");
  } catch (const ctfgan::ValidationError& e) {
    const std::string all = issues_text(e);
    CHECK(all.find("train.batch_size") != std::string::npos);
    CHECK(all.find("train.beta1") != std::string::npos);
    CHECK(all.find("data.hq_resolution") != std::string::npos);
    CHECK(e.issues().size() >= 3);
  }
}

TEST_CASE("width lists must match the block count") {
  auto j = minimal_config();
  j["model"] = {{"blocks", 3}};
  REQUIRE_THROWS_AS(ctfgan::parse_run_config(j), ctfgan::ValidationError);
  j["model"] = {{"blocks", 3},
                {"glh_widths", {8, 8, 8}},
                {"ga_widths", {8, 8, 8}}};
  REQUIRE_NOTHROW(ctfgan::parse_run_config(j));
}

TEST_CASE("too many blocks for the resolution is rejected") {
  auto j = minimal_config();
  j["data"]["hq_resolution"] = 8;
  j["model"] = {{"blocks", 3},
                {"glh_widths", {8, 8, 8}},
                {"ga_widths", {8, 8, 8}}};
  try {
    ctfgan::parse_run_config(j);
    FAIL("expected ValidationError");
  } catch (const ctfgan::ValidationError& e) {
    CHECK(issues_text(e).find("model.blocks") != std::string::npos);
  }
}

TEST_CASE("config hash is canonical and sensitive to values") {
  auto a = minimal_config();
  const ctfgan::RunConfig ca = ctfgan::parse_run_config(a);

  // Same content, different key insertion order.
  nlohmann::json b;
  b["data"] = {{"hq_manifest", "hq.tsv"}, {"root", "/tmp/data"}};
  b["out_dir"] = "/tmp/run";
  const ctfgan::RunConfig cb = ctfgan::parse_run_config(b);
  CHECK(ctfgan::config_hash(ca) == ctfgan::config_hash(cb));

  auto c = minimal_config();
  c["seed"] = 7;
  CHECK(ctfgan::config_hash(ctfgan::parse_run_config(c)) != ctfgan::config_hash(ca));

  auto d = minimal_config();
  d["train"] = {{"ablate_ctfs", true}};
  CHECK(ctfgan::config_hash(ctfgan::parse_run_config(d)) != ctfgan::config_hash(ca));
}

TEST_CASE("serialized config reparses to the same hash") {
  auto j = minimal_config();
  j["seed"] = 123;
  j["model"] = {{"blocks", 1}, {"glh_widths", {4}}, {"ga_widths", {4}}};
  j["train"] = {{"lr", 1e-3}, {"batch_size", 4}};
  const ctfgan::RunConfig cfg = ctfgan::parse_run_config(j);
  const ctfgan::RunConfig again = ctfgan::parse_run_config(ctfgan::run_config_to_json(cfg));
  CHECK(ctfgan::config_hash(cfg) == ctfgan::config_hash(again));
  CHECK(again.train.lr == Catch::Approx(1e-3));
  CHECK(again.model.blocks == 1);
}

TEST_CASE("config file that is not JSON reports a validation error") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "ctfgan_cfg_test";
  fs::create_directories(dir);
  const fs::path p = dir / "bad.json";
  {
    std::ofstream f(p);
    f << "{ not json";
  }
  try {
    ctfgan::load_run_config(p);
    FAIL("expected ValidationError");
  } catch (const ctfgan::ValidationError& e) {
    CHECK(std::string(e.what()).find("JSON") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("missing config file reports an io error") {
  REQUIRE_THROWS_AS(ctfgan::load_run_config("/nonexistent/nowhere.json"),
                    ctfgan::IoError);
}

TEST_CASE("wrong value types name the offending key") {
  auto j = minimal_config();
  j["train"] = {{"batch_size", "sixteen"}};
  j["model"] = {{"ga_conditional_norm", 3}};
  try {
    ctfgan::parse_run_config(j);
    FAIL("expected ValidationError");
  } catch (const ctfgan::ValidationError& e) {
    const std::string all = issues_text(e);
    CHECK(all.find("train.batch_size") != std::string::npos);
    CHECK(all.find("model.ga_conditional_norm") != std::string::npos);
  }
}
