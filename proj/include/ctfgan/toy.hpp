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

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ctfgan/data.hpp"
#include "ctfgan/image_io.hpp"
#include "ctfgan/rng.hpp"

namespace ctfgan {

// Two visually distinct classes a small classifier separates easily:
// class 0 draws concentric rings, class 1 draws diagonal stripes. Each
// sample gets a seeded random phase, hue, and mild pixel noise so the
// corpus has intra-class variety without losing separability.
inline Image make_toy_image(std::int64_t resolution, std::int64_t label, RngStream& rng) {
  check_contract(resolution >= 4, "make_toy_image: resolution must be >= 4");
  check_contract(label == 0 || label == 1, "make_toy_image: label must be 0 or 1");
  const double phase = rng.uniform(0.0, 6.283185307179586);
  const double freq = rng.uniform(0.35, 0.6);
  const double hue_r = rng.uniform(0.6, 1.0);
  const double hue_g = rng.uniform(0.3, 0.9);
  const double hue_b = rng.uniform(0.2, 0.8);
  const double cx = (resolution - 1) / 2.0 + rng.uniform(-1.5, 1.5);
  const double cy = (resolution - 1) / 2.0 + rng.uniform(-1.5, 1.5);

  Image img;
  img.height = resolution;
  img.width = resolution;
  img.pixels.resize(static_cast<std::size_t>(resolution * resolution * 3));
  for (std::int64_t y = 0; y < resolution; ++y)
    for (std::int64_t x = 0; x < resolution; ++x) {
      double wave;
      if (label == 0) {
        const double r = std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy);
        wave = std::sin(r * freq * 2.0 + phase);
      } else {
        wave = std::sin((static_cast<double>(x) + static_cast<double>(y)) * freq + phase);
      }
      const double lum = 0.5 + 0.45 * wave;
      const double noise = rng.uniform(-0.03, 0.03);
      const auto chan = [&](double hue) {
        double v = (lum * hue + noise) * 255.0;
        return static_cast<std::uint8_t>(v < 0 ? 0 : (v > 255 ? 255 : std::lround(v)));
      };
      img.at(y, x, 0) = chan(hue_r);
      img.at(y, x, 1) = chan(hue_g);
      img.at(y, x, 2) = chan(hue_b);
    }
  return img;
}

// In-memory toy HQ corpus: `per_class` samples of each of the two classes,
// interleaved 0,1,0,1,... so any prefix stays class-balanced.
inline Dataset make_toy_dataset(std::int64_t resolution, std::int64_t per_class,
                                std::uint64_t seed) {
  check_contract(per_class >= 1, "make_toy_dataset: per_class must be >= 1");
  RngStream rng(seed, "toy-data");
  Dataset ds;
  ds.resolution = resolution;
  ds.num_classes = 2;
  ds.samples.reserve(static_cast<std::size_t>(2 * per_class));
  for (std::int64_t i = 0; i < per_class; ++i)
    for (std::int64_t label = 0; label < 2; ++label) {
      Sample s;
      s.image = image_to_tensor(make_toy_image(resolution, label, rng));
      s.label = label;
      s.tier = "hq";
      s.path = "toy/" + std::to_string(label) + "_" + std::to_string(i) + ".png";
      ds.samples.push_back(std::move(s));
    }
  return ds;
}

// Writes the toy corpus as PNG files plus a manifest, exercising the same
// ingestion path real datasets use.
inline void write_toy_corpus(const std::filesystem::path& root, std::int64_t resolution,
                             std::int64_t per_class, std::uint64_t seed) {
  RngStream rng(seed, "toy-data");
  std::string manifest;
  std::filesystem::create_directories(root / "toy");
  for (std::int64_t i = 0; i < per_class; ++i)
    for (std::int64_t label = 0; label < 2; ++label) {
      const std::string rel = "toy/" + std::to_string(label) + "_" + std::to_string(i) + ".png";
      save_png(root / rel, make_toy_image(resolution, label, rng));
      manifest += rel + "\t" + std::to_string(label) + "\thq\n";
    }
  atomic_write_bytes(root / "manifest.tsv", manifest);
}

}  // namespace ctfgan
