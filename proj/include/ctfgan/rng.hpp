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
#include <random>
#include <sstream>
#include <string>

#include "ctfgan/errors.hpp"
#include "ctfgan/tensor.hpp"

namespace ctfgan {

inline std::uint64_t fnv1a64(const void* bytes, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

// Streaming variant: fold more bytes into a running FNV-1a hash.
inline constexpr std::uint64_t kFnvOffset = 1469598103934665603ull;

inline std::uint64_t fnv1a64_update(std::uint64_t h, const void* bytes, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

// Seeded random stream. Draws are built from raw engine words only, so the
// sequence is reproducible across standard libraries and the whole state
// serializes as the mt19937_64 state string.
class RngStream {
 public:
  RngStream() : RngStream(0) {}
  explicit RngStream(std::uint64_t seed) : eng_(seed) {}

  // Stream derived from a run seed and a purpose tag, so independent
  // consumers (init/data/noise/...) never share a sequence.
  RngStream(std::uint64_t seed, const std::string& tag)
      : eng_(seed ^ fnv1a64(tag)) {}

  std::uint64_t raw() { return eng_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) by rejection.
  std::int64_t below(std::int64_t n) {
    check_contract(n > 0, "rng: below(n) requires n > 0");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t bound = ~std::uint64_t{0} - (~std::uint64_t{0} % un);
    std::uint64_t x = eng_();
    while (x >= bound) x = eng_();
    return static_cast<std::int64_t>(x % un);
  }

  std::int64_t range(std::int64_t lo, std::int64_t hi_inclusive) {
    check_contract(hi_inclusive >= lo, "rng: empty integer range");
    return lo + below(hi_inclusive - lo + 1);
  }

  // Standard normal via Box-Muller. Both values are computed and one is
  // discarded: the stream state never depends on call parity.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  Tensor normal_tensor(Shape shape, double mean = 0.0, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = normal(mean, stddev);
    return t;
  }

  Tensor uniform_tensor(Shape shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(lo, hi);
    return t;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(static_cast<std::int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string serialize() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
    if (!is) throw IntegrityError("rng: malformed serialized state");
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace ctfgan
