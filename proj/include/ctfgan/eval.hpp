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

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ctfgan/autograd.hpp"
#include "ctfgan/data.hpp"
#include "ctfgan/errors.hpp"
#include "ctfgan/image_io.hpp"
#include "ctfgan/nn/layers.hpp"
#include "ctfgan/nn/module.hpp"
#include "ctfgan/ops.hpp"
#include "ctfgan/optim.hpp"
#include "ctfgan/rng.hpp"
#include "ctfgan/tensor.hpp"

namespace ctfgan {

struct EvalReport {
  double is_mean = 0.0;
  double is_std = 0.0;
  double fid = 0.0;
  std::int64_t n_samples = 0;
  std::uint64_t classifier_fingerprint = 0;
  std::int64_t step = 0;
  std::int64_t phase = 0;
};

// exp(mean_i KL(p(y|x_i) || p(y))) per split, then mean/std over splits.
// Rows must be probability vectors; 0 * log 0 is treated as 0.
inline std::pair<double, double> inception_score_surrogate(const Tensor& probs,
                                                           std::int64_t splits = 10) {
  check_contract(probs.rank() == 2, "inception_score_surrogate: expected [N,K]");
  const std::int64_t n = probs.dim(0), k = probs.dim(1);
  check_contract(n >= 1 && k >= 1, "inception_score_surrogate: empty input");
  check_contract(splits >= 1 && splits <= n,
                 "inception_score_surrogate: splits must be in [1, N]");
  for (std::int64_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::int64_t j = 0; j < k; ++j) {
      const double p = probs.at2(i, j);
      check_contract(std::isfinite(p) && p >= 0.0,
                     "inception_score_surrogate: row " + std::to_string(i) +
                         " is not a probability vector");
      sum += p;
    }
    check_contract(std::abs(sum - 1.0) <= 1e-6,
                   "inception_score_surrogate: row " + std::to_string(i) +
                       " sums to " + std::to_string(sum));
  }

  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(splits));
  for (std::int64_t s = 0; s < splits; ++s) {
    // Contiguous split boundaries; remainder spread over the first splits.
    const std::int64_t lo = s * n / splits, hi = (s + 1) * n / splits;
    const std::int64_t cnt = hi - lo;
    if (cnt == 0) continue;
    std::vector<double> marginal(static_cast<std::size_t>(k), 0.0);
    for (std::int64_t i = lo; i < hi; ++i)
      for (std::int64_t j = 0; j < k; ++j)
        marginal[static_cast<std::size_t>(j)] += probs.at2(i, j) / static_cast<double>(cnt);
    double mean_kl = 0.0;
    for (std::int64_t i = lo; i < hi; ++i) {
      double kl = 0.0;
      for (std::int64_t j = 0; j < k; ++j) {
        const double p = probs.at2(i, j);
        if (p > 0.0) kl += p * (std::log(p) - std::log(marginal[static_cast<std::size_t>(j)]));
      }
      mean_kl += kl / static_cast<double>(cnt);
    }
    scores.push_back(std::exp(mean_kl));
  }
  double mean = 0.0;
  for (double v : scores) mean += v;
  mean /= static_cast<double>(scores.size());
  double var = 0.0;
  for (double v : scores) var += (v - mean) * (v - mean);
  var /= static_cast<double>(scores.size());
  return {mean, std::sqrt(var)};
}

namespace detail {

inline Eigen::MatrixXd tensor_to_matrix(const Tensor& t) {
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  for (std::int64_t i = 0; i < t.dim(0); ++i)
    for (std::int64_t j = 0; j < t.dim(1); ++j) m(i, j) = t.at2(i, j);
  return m;
}

// Symmetric PSD square root via eigendecomposition; negative eigenvalues
// from roundoff clamp to zero.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  Eigen::VectorXd lam = es.eigenvalues();
  for (Eigen::Index i = 0; i < lam.size(); ++i) lam(i) = lam(i) > 0.0 ? std::sqrt(lam(i)) : 0.0;
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

// ||mu_r - mu_f||^2 + Tr(S_r + S_f - 2 (S_r S_f)^{1/2}). Covariances are
// unbiased and stabilized with 1e-6 * I. The product S_r S_f is not
// symmetric, so its root is taken as S_r^{1/2} (S_r^{1/2} S_f S_r^{1/2})^{1/2}
// pulled back through the trace, which only needs the inner symmetric root.
inline double fid_surrogate(const Tensor& feats_real, const Tensor& feats_fake) {
  check_contract(feats_real.rank() == 2 && feats_fake.rank() == 2,
                 "fid_surrogate: expected [N,D] feature matrices");
  check_contract(feats_real.dim(1) == feats_fake.dim(1),
                 "fid_surrogate: feature dimensions differ");
  check_contract(feats_real.dim(0) >= 2 && feats_fake.dim(0) >= 2,
                 "fid_surrogate: need at least 2 samples per side");
  for (const Tensor* t : {&feats_real, &feats_fake})
    for (std::int64_t i = 0; i < t->numel(); ++i)
      check_contract(std::isfinite(t->data()[i]), "fid_surrogate: non-finite feature");

  const Eigen::MatrixXd xr = detail::tensor_to_matrix(feats_real);
  const Eigen::MatrixXd xf = detail::tensor_to_matrix(feats_fake);
  const Eigen::VectorXd mu_r = xr.colwise().mean();
  const Eigen::VectorXd mu_f = xf.colwise().mean();
  const Eigen::MatrixXd cr = xr.rowwise() - mu_r.transpose();
  const Eigen::MatrixXd cf = xf.rowwise() - mu_f.transpose();
  const double eps = 1e-6;
  const auto d = xr.cols();
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd sr =
      cr.transpose() * cr / static_cast<double>(xr.rows() - 1) + eps * id;
  const Eigen::MatrixXd sf =
      cf.transpose() * cf / static_cast<double>(xf.rows() - 1) + eps * id;

  const Eigen::MatrixXd sr_half = detail::psd_sqrt(sr);
  const Eigen::MatrixXd inner = detail::psd_sqrt(sr_half * sf * sr_half);
  const double mean_term = (mu_r - mu_f).squaredNorm();
  const double trace_term = sr.trace() + sf.trace() - 2.0 * inner.trace();
  const double fid = mean_term + trace_term;
  // Roundoff can push an exact zero slightly negative; clamp, never mask
  // a genuinely broken value.
  return fid < 0.0 && fid > -1e-6 ? 0.0 : fid;
}

// Writes a row-major tile grid of [N,3,H,W] samples as one PNG. Encoding
// settings are fixed, so identical inputs produce identical bytes.
inline void emit_sample_grid(const Tensor& images, const std::filesystem::path& path,
                             std::int64_t rows, std::int64_t cols) {
  save_png(path, tile_grid(images, rows, cols));
}

// Small convolutional classifier for the evaluation surrogates. The
// 64-dim global-average-pooled activation doubles as the FID feature.
class ToyClassifier : public nn::Module {
 public:
  static constexpr std::int64_t kFeatureDim = 64;

  ToyClassifier(std::int64_t num_classes, std::int64_t resolution, RngStream& rng)
      : num_classes_(num_classes),
        resolution_(resolution),
        conv1_(3, 32, 3, 1, rng),
        conv2_(32, kFeatureDim, 3, 1, rng),
        fc_(kFeatureDim, num_classes, rng) {
    check_contract(num_classes >= 2, "ToyClassifier: need at least 2 classes");
    check_contract(resolution >= 8 && resolution % 4 == 0,
                   "ToyClassifier: resolution must be a multiple of 4, at least 8");
    add_child("conv1", &conv1_);
    add_child("conv2", &conv2_);
    add_child("fc", &fc_);
  }

  struct Out {
    Var logits;    // [N, num_classes]
    Var features;  // [N, 64]
  };

  Out forward(const Tensor& images) {
    check_contract(images.rank() == 4 && images.dim(1) == 3 &&
                       images.dim(2) == resolution_ && images.dim(3) == resolution_,
                   "ToyClassifier: expected [N,3," + std::to_string(resolution_) + "," +
                       std::to_string(resolution_) + "]");
    Var x = ops::constant(images);
    x = ops::relu(conv1_.forward(x));
    x = ops::avg_pool2x2(x);
    x = ops::relu(conv2_.forward(x));
    x = ops::avg_pool2x2(x);
    const double inv_hw = 1.0 / static_cast<double>((resolution_ / 4) * (resolution_ / 4));
    Var feats = ops::scale(ops::spatial_sum(x), inv_hw);  // global average pool, [N, 64]
    Var logits = fc_.forward(feats);
    return {logits, feats};
  }

  Tensor predict_probs(const Tensor& images) {
    auto out = forward(images);
    const Tensor& lg = out.logits.value();
    Tensor probs(lg.shape());
    for (std::int64_t i = 0; i < lg.dim(0); ++i) {
      double mx = lg.at2(i, 0);
      for (std::int64_t j = 1; j < lg.dim(1); ++j) mx = std::max(mx, lg.at2(i, j));
      double z = 0.0;
      for (std::int64_t j = 0; j < lg.dim(1); ++j) z += std::exp(lg.at2(i, j) - mx);
      for (std::int64_t j = 0; j < lg.dim(1); ++j)
        probs.at2(i, j) = std::exp(lg.at2(i, j) - mx) / z;
    }
    return probs;
  }

  Tensor features(const Tensor& images) { return forward(images).features.value(); }

  std::int64_t num_classes() const { return num_classes_; }
  std::int64_t resolution() const { return resolution_; }

  // Order-sensitive hash over every parameter byte: two classifiers agree
  // on all reports iff their fingerprints match.
  std::uint64_t fingerprint() const {
    std::uint64_t h = kFnvOffset;
    for (const auto& [name, p] : const_cast<ToyClassifier*>(this)->named_params()) {
      h = fnv1a64_update(h, name.data(), name.size());
      const Tensor& t = p->value();
      h = fnv1a64_update(h, t.data(), static_cast<std::size_t>(t.numel()) * sizeof(double));
    }
    return h;
  }

 private:
  std::int64_t num_classes_;
  std::int64_t resolution_;
  nn::Conv2d conv1_, conv2_;
  nn::Linear fc_;
};

// Trains the surrogate classifier on a dataset with plain softmax cross
// entropy until it reaches the target train accuracy (or the epoch cap).
inline double train_classifier(ToyClassifier& clf, const Dataset& ds, std::uint64_t seed,
                               double target_accuracy = 0.9, std::int64_t max_epochs = 60,
                               std::int64_t batch_size = 16) {
  check_contract(ds.size() >= 2, "train_classifier: dataset too small");
  Adam opt(clf.named_params(), AdamConfig{1e-3, 0.9, 0.999, 1e-8});
  RngStream rng(seed, "clf-train");

  const auto accuracy = [&]() {
    std::int64_t correct = 0;
    for (std::int64_t start = 0; start < ds.size(); start += batch_size) {
      const std::int64_t n = std::min<std::int64_t>(batch_size, ds.size() - start);
      Tensor batch({n, 3, ds.resolution, ds.resolution});
      for (std::int64_t i = 0; i < n; ++i) {
        const Tensor& img = ds.samples[static_cast<std::size_t>(start + i)].image;
        std::copy(img.data(), img.data() + img.numel(), batch.data() + i * img.numel());
      }
      const Tensor probs = clf.predict_probs(batch);
      for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t arg = 0;
        for (std::int64_t j = 1; j < probs.dim(1); ++j)
          if (probs.at2(i, j) > probs.at2(i, arg)) arg = j;
        if (arg == ds.samples[static_cast<std::size_t>(start + i)].label) ++correct;
      }
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
  };

  double acc = accuracy();
  std::vector<std::int64_t> order(static_cast<std::size_t>(ds.size()));
  for (std::int64_t e = 0; e < max_epochs && acc < target_accuracy; ++e) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
    rng.shuffle(order);
    for (std::int64_t start = 0; start < ds.size(); start += batch_size) {
      const std::int64_t n = std::min<std::int64_t>(batch_size, ds.size() - start);
      Tensor batch({n, 3, ds.resolution, ds.resolution});
      std::vector<std::int64_t> labels(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) {
        const auto& s = ds.samples[static_cast<std::size_t>(order[static_cast<std::size_t>(start + i)])];
        std::copy(s.image.data(), s.image.data() + s.image.numel(),
                  batch.data() + i * s.image.numel());
        labels[static_cast<std::size_t>(i)] = s.label;
      }
      auto out = clf.forward(batch);
      Var loss = ops::mean_all(ops::softmax_cross_entropy(out.logits, labels));
      opt.zero_grad();
      ctfgan::backward(loss);
      opt.step();
    }
    acc = accuracy();
  }
  return acc;
}

// Batched helpers so evaluation never builds one giant graph.
inline Tensor classifier_probs(ToyClassifier& clf, const Tensor& images,
                               std::int64_t batch_size = 64) {
  const std::int64_t n = images.dim(0);
  Tensor all({n, clf.num_classes()});
  for (std::int64_t start = 0; start < n; start += batch_size) {
    const std::int64_t cnt = std::min<std::int64_t>(batch_size, n - start);
    Tensor chunk({cnt, images.dim(1), images.dim(2), images.dim(3)});
    const std::int64_t per = images.numel() / n;
    std::copy(images.data() + start * per, images.data() + (start + cnt) * per, chunk.data());
    const Tensor probs = clf.predict_probs(chunk);
    std::copy(probs.data(), probs.data() + probs.numel(), all.data() + start * clf.num_classes());
  }
  return all;
}

inline Tensor classifier_features(ToyClassifier& clf, const Tensor& images,
                                  std::int64_t batch_size = 64) {
  const std::int64_t n = images.dim(0);
  Tensor all({n, ToyClassifier::kFeatureDim});
  for (std::int64_t start = 0; start < n; start += batch_size) {
    const std::int64_t cnt = std::min<std::int64_t>(batch_size, n - start);
    Tensor chunk({cnt, images.dim(1), images.dim(2), images.dim(3)});
    const std::int64_t per = images.numel() / n;
    std::copy(images.data() + start * per, images.data() + (start + cnt) * per, chunk.data());
    const Tensor feats = clf.features(chunk);
    std::copy(feats.data(), feats.data() + feats.numel(),
              all.data() + start * ToyClassifier::kFeatureDim);
  }
  return all;
}

// Full surrogate evaluation of a sample batch against reference features.
inline EvalReport evaluate_samples(ToyClassifier& clf, const Tensor& samples,
                                   const Tensor& real_features, std::int64_t step,
                                   std::int64_t phase, std::int64_t splits = 10) {
  EvalReport r;
  r.n_samples = samples.dim(0);
  r.step = step;
  r.phase = phase;
  r.classifier_fingerprint = clf.fingerprint();
  const Tensor probs = classifier_probs(clf, samples);
  const std::int64_t usable_splits = std::min<std::int64_t>(splits, samples.dim(0));
  std::tie(r.is_mean, r.is_std) = inception_score_surrogate(probs, usable_splits);
  const Tensor fake_features = classifier_features(clf, samples);
  r.fid = fid_surrogate(real_features, fake_features);
  return r;
}

}  // namespace ctfgan
