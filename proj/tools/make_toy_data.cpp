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

// Writes the synthetic two-class corpus (rings vs stripes) used by the
// smoke and acceptance runs: PNGs plus a manifest.tsv under --out.

#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "ctfgan/toy.hpp"

int main(int argc, char** argv) {
  CLI::App app{"ctfgan-make-toy-data: deterministic synthetic corpus generator"};
  std::string out;
  std::int64_t resolution = 32, per_class = 32;
  std::uint64_t seed = 7;
  app.add_option("--out", out, "corpus root directory")->required();
  app.add_option("--resolution", resolution, "square image size in pixels");
  app.add_option("--per-class", per_class, "images per class");
  app.add_option("--seed", seed, "generation seed");
  CLI11_PARSE(app, argc, argv);

  try {
    ctfgan::write_toy_corpus(out, resolution, per_class, seed);
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << "\n";
    return 3;
  }
  std::cout << "wrote " << 2 * per_class << " images at " << resolution << "x" << resolution
            << " under " << out << "\n";
  return 0;
}
