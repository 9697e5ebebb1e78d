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

#include <unistd.h>

#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>
#include <string>

#include "ctfgan/serialize.hpp"

using ctfgan::Checkpoint;
using ctfgan::Tensor;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  auto d = fs::temp_directory_path() / ("ctfgan_ser_" + std::to_string(::getpid()));
  fs::create_directories(d);
  return d;
}

Checkpoint sample_checkpoint() {
  Checkpoint ck;
  ck.header["version"] = 1;
  ck.header["phase"] = 2;
  ck.header["note"] = "unit";
  ck.tensors["w"] = Tensor({2, 3}, {1, 2, 3, 4, 5, 6});
  ck.tensors["b"] = Tensor({3}, {-0.5, 0.0, 0.5});
  ck.tensors["scalar"] = Tensor({1}, {42.0});
  return ck;
}

}  // namespace

TEST_CASE("checkpoint encode/decode round-trips header and tensors") {
  const Checkpoint ck = sample_checkpoint();
  const std::string bytes = ctfgan::encode_checkpoint(ck);
  const Checkpoint back = ctfgan::decode_checkpoint(bytes);

  REQUIRE(back.header.at("phase").get<int>() == 2);
  REQUIRE(back.header.at("note").get<std::string>() == "unit");
  REQUIRE(back.tensors.size() == 3);
  const Tensor& w = back.tensors.at("w");
  REQUIRE(w.shape() == ctfgan::Shape{2, 3});
  for (int i = 0; i < 6; ++i) REQUIRE(w.data()[i] == ck.tensors.at("w").data()[i]);
}

TEST_CASE("checkpoint encoding is deterministic") {
  const Checkpoint ck = sample_checkpoint();
  REQUIRE(ctfgan::encode_checkpoint(ck) == ctfgan::encode_checkpoint(ck));
}

TEST_CASE("save/load checkpoint through the filesystem") {
  const auto dir = temp_dir();
  const auto path = dir / "nested" / "ck.bin";
  ctfgan::save_checkpoint(path, sample_checkpoint());
  const Checkpoint back = ctfgan::load_checkpoint(path);
  REQUIRE(back.tensors.at("scalar").data()[0] == 42.0);
  // Atomic write leaves no temporary file behind.
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(path.parent_path())) ++entries;
  REQUIRE(entries == 1);
  fs::remove_all(dir);
}

TEST_CASE("single-bit corruption is detected anywhere in the file") {
  const std::string bytes = ctfgan::encode_checkpoint(sample_checkpoint());
  // Flip one bit in the magic, the header, a tensor payload, and the hash.
  for (std::size_t pos : {std::size_t{2}, bytes.size() / 3, bytes.size() / 2,
                          bytes.size() - 3}) {
    std::string bad = bytes;
    bad[pos] = static_cast<char>(bad[pos] ^ 0x10);
    REQUIRE_THROWS_AS(ctfgan::decode_checkpoint(bad), ctfgan::IntegrityError);
  }
}

TEST_CASE("truncated checkpoints are rejected") {
  const std::string bytes = ctfgan::encode_checkpoint(sample_checkpoint());
  for (std::size_t keep : {std::size_t{0}, std::size_t{4}, bytes.size() / 2,
                           bytes.size() - 1}) {
    REQUIRE_THROWS_AS(ctfgan::decode_checkpoint(bytes.substr(0, keep)),
                      ctfgan::IntegrityError);
  }
}

TEST_CASE("trailing garbage is rejected") {
  std::string bytes = ctfgan::encode_checkpoint(sample_checkpoint());
  bytes += "xx";
  REQUIRE_THROWS_AS(ctfgan::decode_checkpoint(bytes), ctfgan::IntegrityError);
}

TEST_CASE("missing checkpoint file raises an io error") {
  REQUIRE_THROWS_AS(ctfgan::load_checkpoint("/nonexistent/dir/ck.bin"), ctfgan::IoError);
}

TEST_CASE("empty checkpoint is valid") {
  Checkpoint ck;
  ck.header["empty"] = true;
  const Checkpoint back = ctfgan::decode_checkpoint(ctfgan::encode_checkpoint(ck));
  REQUIRE(back.tensors.empty());
  REQUIRE(back.header.at("empty").get<bool>());
}
