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
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ctfgan/errors.hpp"
#include "ctfgan/image_io.hpp"
#include "ctfgan/rng.hpp"
#include "ctfgan/tensor.hpp"

namespace ctfgan {

// The HQ and LQ label spaces are disjoint namespaces: an HQ "0" and an
// LQ "0" are unrelated classes and are never identified with each other.
struct LabelSpaces {
  std::int64_t num_hq_classes = 0;
  std::int64_t num_lq_classes = 0;
  std::vector<std::string> hq_names;
  std::vector<std::string> lq_names;

  void validate() const {
    check_contract(num_hq_classes >= 1, "LabelSpaces: need at least one HQ class");
    check_contract(num_lq_classes >= 1, "LabelSpaces: need at least one LQ class");
    check_contract(hq_names.empty() ||
                       hq_names.size() == static_cast<std::size_t>(num_hq_classes),
                   "LabelSpaces: HQ name map size mismatch");
    check_contract(lq_names.empty() ||
                       lq_names.size() == static_cast<std::size_t>(num_lq_classes),
                   "LabelSpaces: LQ name map size mismatch");
  }
};

struct Sample {
  Tensor image;  // [3,H,W], values in [-1,1]
  std::int64_t label = 0;
  std::string tier;  // "hq" or "lq"
  std::string path;  // manifest-relative origin, for diagnostics
};

// Eagerly decoded, normalized dataset. Index order equals manifest order.
struct Dataset {
  std::vector<Sample> samples;
  std::int64_t resolution = 0;
  std::int64_t num_classes = 0;

  std::int64_t size() const { return static_cast<std::int64_t>(samples.size()); }
};

struct ManifestEntry {
  std::string path;
  std::string label;
  std::string tier;
  std::int64_t line = 0;  // 1-based source line, for error reports
};

// Parses `relative/path<TAB>label<TAB>tier` lines. Blank lines and lines
// starting with '#' are skipped so manifests can carry comments.
inline std::vector<ManifestEntry> parse_manifest(const std::string& text,
                                                 std::vector<std::string>* errors) {
  std::vector<ManifestEntry> entries;
  std::istringstream in(text);
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos ||
        line.find('\t', t2 + 1) != std::string::npos) {
      if (errors)
        errors->push_back("line " + std::to_string(line_no) +
                          ": expected exactly 3 tab-separated fields");
      continue;
    }
    ManifestEntry e;
    e.path = line.substr(0, t1);
    e.label = line.substr(t1 + 1, t2 - t1 - 1);
    e.tier = line.substr(t2 + 1);
    e.line = line_no;
    if (e.path.empty() || e.label.empty() || e.tier.empty()) {
      if (errors) errors->push_back("line " + std::to_string(line_no) + ": empty field");
      continue;
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

namespace detail {

inline std::optional<std::int64_t> parse_label_id(const std::string& s) {
  if (s.empty()) return std::nullopt;
  std::int64_t v = 0;
  for (char ch : s) {
    if (ch < '0' || ch > '9') return std::nullopt;
    v = v * 10 + (ch - '0');
    if (v > 1'000'000) return std::nullopt;
  }
  return v;
}

}  // namespace detail

// Loads every manifest entry under `root`. All problems are collected and
// reported together so one pass surfaces the complete repair list. Labels
// are numeric ids in [0, num_classes); `tier` must match `expected_tier`.
inline Dataset load_corpus(const std::filesystem::path& root,
                           const std::filesystem::path& manifest_path,
                           const std::string& expected_tier, std::int64_t num_classes) {
  check_contract(num_classes >= 1, "load_corpus: need at least one class");
  std::vector<std::string> errors;
  const std::string text = read_file_bytes(manifest_path);
  const auto entries = parse_manifest(text, &errors);

  Dataset ds;
  ds.num_classes = num_classes;
  for (const auto& e : entries) {
    const std::string where = "line " + std::to_string(e.line) + " (" + e.path + ")";
    const auto label = detail::parse_label_id(e.label);
    if (!label || *label >= num_classes) {
      errors.push_back(where + ": unknown label '" + e.label + "' for " +
                       std::to_string(num_classes) + " classes");
      continue;
    }
    if (e.tier != expected_tier) {
      errors.push_back(where + ": tier '" + e.tier + "' where '" + expected_tier +
                       "' was required");
      continue;
    }
    const auto full = root / e.path;
    if (!std::filesystem::exists(full)) {
      errors.push_back(where + ": missing file");
      continue;
    }
    Image img;
    try {
      img = load_image(full);
    } catch (const std::runtime_error& err) {
      errors.push_back(where + ": " + err.what());
      continue;
    }
    if (img.height != img.width) {
      errors.push_back(where + ": non-square image " + std::to_string(img.height) + "x" +
                       std::to_string(img.width));
      continue;
    }
    if (ds.resolution == 0) ds.resolution = img.height;
    if (img.height != ds.resolution) {
      errors.push_back(where + ": resolution " + std::to_string(img.height) +
                       " differs from corpus resolution " + std::to_string(ds.resolution));
      continue;
    }
    Sample s;
    s.image = image_to_tensor(img);
    s.label = *label;
    s.tier = e.tier;
    s.path = e.path;
    ds.samples.push_back(std::move(s));
  }
  if (!errors.empty()) {
    std::vector<std::string> issues;
    issues.push_back("corpus validation failed (" + std::to_string(errors.size()) +
                     " problem(s)) in " + manifest_path.string());
    for (auto& m : errors) issues.push_back("  " + m);
    throw ValidationError(std::move(issues));
  }
  return ds;
}

// Area-average downsampling of one [3,H,W] tensor by an integer factor.
inline Tensor area_downsample(const Tensor& img, std::int64_t factor) {
  check_contract(img.rank() == 3 && img.dim(0) == 3, "area_downsample: expected [3,H,W]");
  check_contract(factor >= 1, "area_downsample: factor must be >= 1");
  check_contract(img.dim(1) % factor == 0 && img.dim(2) % factor == 0,
                 "area_downsample: factor " + std::to_string(factor) +
                     " does not divide resolution " + std::to_string(img.dim(1)));
  if (factor == 1) return img;
  const std::int64_t oh = img.dim(1) / factor, ow = img.dim(2) / factor;
  Tensor out({3, oh, ow});
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (std::int64_t dy = 0; dy < factor; ++dy)
          for (std::int64_t dx = 0; dx < factor; ++dx)
            acc += img.at3(c, y * factor + dy, x * factor + dx);
        out.at3(c, y, x) = acc * inv;
      }
  return out;
}

// Derives an LQ dataset by area-averaging every HQ sample. Labels carry
// over numerically but land in the LQ label space, which is distinct.
inline Dataset make_lq_from_hq(const Dataset& hq, std::int64_t factor) {
  check_contract(hq.resolution % std::max<std::int64_t>(factor, 1) == 0,
                 "make_lq_from_hq: factor must divide the HQ resolution");
  Dataset lq;
  lq.num_classes = hq.num_classes;
  lq.resolution = hq.resolution / factor;
  lq.samples.reserve(hq.samples.size());
  for (const auto& s : hq.samples) {
    Sample t;
    t.image = area_downsample(s.image, factor);
    t.label = s.label;
    t.tier = "lq";
    t.path = s.path;
    lq.samples.push_back(std::move(t));
  }
  return lq;
}

struct QualityTieredBatch {
  Tensor hq_images;                  // [n/2, 3, R, R]
  std::vector<std::int64_t> hq_labels;
  Tensor lq_images;                  // [n/2, 3, R/2^M, R/2^M]
  std::vector<std::int64_t> lq_labels;
};

// Draws equal HQ/LQ halves. Each tier walks a seeded permutation of its
// dataset; exhausting a tier reshuffles it, so every epoch visits each
// sample exactly once even when batches straddle the boundary.
class MixedBatchSampler {
 public:
  MixedBatchSampler(const Dataset* hq, const Dataset* lq, std::int64_t batch_size,
                    std::uint64_t seed)
      : hq_(hq), lq_(lq), batch_(batch_size), rng_(seed, "sampler") {
    check_contract(batch_ >= 2, "MixedBatchSampler: batch size must be >= 2");
    check_contract(batch_ % 2 == 0,
                   "MixedBatchSampler: equal-split policy needs an even batch size, got " +
                       std::to_string(batch_));
    if (hq_->size() == 0) throw DataError("MixedBatchSampler: HQ dataset is empty");
    if (lq_->size() == 0) throw DataError("MixedBatchSampler: LQ dataset is empty");
    reshuffle(hq_perm_, hq_->size());
    reshuffle(lq_perm_, lq_->size());
  }

  QualityTieredBatch next() {
    const std::int64_t half = batch_ / 2;
    QualityTieredBatch b;
    b.hq_images = Tensor({half, 3, hq_->resolution, hq_->resolution});
    b.lq_images = Tensor({half, 3, lq_->resolution, lq_->resolution});
    for (std::int64_t i = 0; i < half; ++i) {
      const auto& s = hq_->samples[static_cast<std::size_t>(draw(hq_perm_, hq_cursor_,
                                                                 hq_epochs_, hq_->size()))];
      copy_into(b.hq_images, i, s.image);
      b.hq_labels.push_back(s.label);
      ++hq_drawn_;
    }
    for (std::int64_t i = 0; i < half; ++i) {
      const auto& s = lq_->samples[static_cast<std::size_t>(draw(lq_perm_, lq_cursor_,
                                                                 lq_epochs_, lq_->size()))];
      copy_into(b.lq_images, i, s.image);
      b.lq_labels.push_back(s.label);
      ++lq_drawn_;
    }
    return b;
  }

  std::int64_t hq_drawn() const { return hq_drawn_; }
  std::int64_t lq_drawn() const { return lq_drawn_; }
  std::int64_t hq_epochs() const { return hq_epochs_; }
  std::int64_t lq_epochs() const { return lq_epochs_; }
  std::int64_t batch_size() const { return batch_; }

  // Sampler state as named tensors, so checkpoints can resume the exact
  // epoch position. The RNG engine state rides along as a byte string.
  std::map<std::string, Tensor> state_dict() const {
    std::map<std::string, Tensor> st;
    st["hq_perm"] = perm_tensor(hq_perm_);
    st["lq_perm"] = perm_tensor(lq_perm_);
    Tensor counters({8});
    counters.data()[0] = static_cast<double>(hq_cursor_);
    counters.data()[1] = static_cast<double>(lq_cursor_);
    counters.data()[2] = static_cast<double>(hq_epochs_);
    counters.data()[3] = static_cast<double>(lq_epochs_);
    counters.data()[4] = static_cast<double>(hq_drawn_);
    counters.data()[5] = static_cast<double>(lq_drawn_);
    counters.data()[6] = static_cast<double>(batch_);
    counters.data()[7] = 0.0;
    st["counters"] = counters;
    const std::string rs = rng_.serialize();
    Tensor rng_state({static_cast<std::int64_t>(rs.size())});
    for (std::size_t i = 0; i < rs.size(); ++i)
      rng_state.data()[i] = static_cast<double>(static_cast<unsigned char>(rs[i]));
    st["rng_state"] = rng_state;
    return st;
  }

  void load_state_dict(const std::map<std::string, Tensor>& st) {
    const auto need = [&](const std::string& k) -> const Tensor& {
      auto it = st.find(k);
      if (it == st.end()) throw IntegrityError("sampler state missing '" + k + "'");
      return it->second;
    };
    const Tensor& counters = need("counters");
    if (counters.numel() != 8) throw IntegrityError("sampler counters malformed");
    if (static_cast<std::int64_t>(counters.data()[6]) != batch_)
      throw IntegrityError("sampler batch size mismatch on resume");
    hq_cursor_ = static_cast<std::int64_t>(counters.data()[0]);
    lq_cursor_ = static_cast<std::int64_t>(counters.data()[1]);
    hq_epochs_ = static_cast<std::int64_t>(counters.data()[2]);
    lq_epochs_ = static_cast<std::int64_t>(counters.data()[3]);
    hq_drawn_ = static_cast<std::int64_t>(counters.data()[4]);
    lq_drawn_ = static_cast<std::int64_t>(counters.data()[5]);
    load_perm(hq_perm_, need("hq_perm"), hq_->size(), "hq_perm");
    load_perm(lq_perm_, need("lq_perm"), lq_->size(), "lq_perm");
    const Tensor& rng_state = need("rng_state");
    std::string rs(static_cast<std::size_t>(rng_state.numel()), '\0');
    for (std::int64_t i = 0; i < rng_state.numel(); ++i)
      rs[static_cast<std::size_t>(i)] =
          static_cast<char>(static_cast<unsigned char>(rng_state.data()[i]));
    rng_.deserialize(rs);
  }

 private:
  static void copy_into(Tensor& dst, std::int64_t n, const Tensor& img) {
    const std::int64_t plane = img.numel();
    std::copy(img.data(), img.data() + plane, dst.data() + n * plane);
  }

  void reshuffle(std::vector<std::int64_t>& perm, std::int64_t n) {
    perm.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    rng_.shuffle(perm);
  }

  std::int64_t draw(std::vector<std::int64_t>& perm, std::int64_t& cursor,
                    std::int64_t& epochs, std::int64_t n) {
    if (cursor >= n) {
      reshuffle(perm, n);
      cursor = 0;
      ++epochs;
    }
    return perm[static_cast<std::size_t>(cursor++)];
  }

  static Tensor perm_tensor(const std::vector<std::int64_t>& perm) {
    Tensor t({static_cast<std::int64_t>(perm.size())});
    for (std::size_t i = 0; i < perm.size(); ++i) t.data()[i] = static_cast<double>(perm[i]);
    return t;
  }

  static void load_perm(std::vector<std::int64_t>& perm, const Tensor& t, std::int64_t n,
                        const std::string& name) {
    if (t.numel() != n) throw IntegrityError("sampler state '" + name + "' size mismatch");
    perm.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
      perm[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(t.data()[i]);
  }

  const Dataset* hq_;
  const Dataset* lq_;
  std::int64_t batch_;
  RngStream rng_;
  std::vector<std::int64_t> hq_perm_, lq_perm_;
  std::int64_t hq_cursor_ = 0, lq_cursor_ = 0;
  std::int64_t hq_epochs_ = 0, lq_epochs_ = 0;
  std::int64_t hq_drawn_ = 0, lq_drawn_ = 0;
};

}  // namespace ctfgan
