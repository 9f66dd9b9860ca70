// Copyright 2026 The osodd Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "osodd/core.hpp"

namespace osodd {

inline std::size_t argmax_index(std::span<const double> values) {
  if (values.empty()) throw InputError("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;  // ties keep the lowest index
  }
  return best;
}

/// Numerically stable softmax (max subtraction). Entries are positive and
/// sum to 1 within 1e-12.
inline std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw InputError("softmax of empty logits");
  const double m = logits[argmax_index(logits)];
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

/// Maximum softmax probability, in (0, 1]. Larger = more in-distribution.
inline double msp_id_score(std::span<const double> logits) {
  if (logits.empty()) throw InputError("msp of empty logits");
  const double m = logits[argmax_index(logits)];
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - m);
  return 1.0 / sum;
}

/// Maximum raw logit. Larger = more in-distribution.
inline double max_logit_id_score(std::span<const double> logits) {
  if (logits.empty()) throw InputError("max_logit of empty logits");
  return logits[argmax_index(logits)];
}

/// Negative free energy T*log(sum_j exp(l_j / T)). Bounded by
/// max(l) <= score <= max(l) + T*log(C); larger = more in-distribution.
inline double energy_id_score(std::span<const double> logits,
                              double temperature) {
  if (logits.empty()) throw InputError("energy of empty logits");
  if (!(temperature > 0.0)) {
    throw InputError("energy: temperature must be > 0");
  }
  const double m = logits[argmax_index(logits)];
  double sum = 0.0;
  for (double l : logits) sum += std::exp((l - m) / temperature);
  return m + temperature * std::log(sum);
}

/// Class-conditional Gaussian scorer: per-class means with a single pooled
/// covariance (population form) plus a trace-scaled ridge. The score of a
/// query is the negated squared Mahalanobis distance to the nearest mean.
class MahalanobisModel {
 public:
  /// Fits from per-class lists of feature vectors. Requires a consistent
  /// feature dimension and at least two samples overall; classes with no
  /// samples are skipped.
  static MahalanobisModel fit(
      const std::vector<std::vector<std::vector<double>>>& per_class_features) {
    MahalanobisModel model;
    std::size_t total = 0;
    for (const auto& cls : per_class_features) {
      for (const auto& f : cls) {
        if (model.dim_ == 0) model.dim_ = f.size();
        if (f.size() != model.dim_ || f.empty()) {
          throw InputError("mahalanobis fit: inconsistent feature dimension");
        }
        ++total;
      }
    }
    if (total < 2) {
      throw InputError("mahalanobis fit: needs at least 2 samples, got " +
                       std::to_string(total));
    }
    const std::size_t d = model.dim_;
    std::vector<double> cov(d * d, 0.0);
    for (const auto& cls : per_class_features) {
      if (cls.empty()) continue;
      std::vector<double> mean(d, 0.0);
      for (const auto& f : cls) {
        for (std::size_t j = 0; j < d; ++j) mean[j] += f[j];
      }
      for (double& m : mean) m /= static_cast<double>(cls.size());
      for (const auto& f : cls) {
        for (std::size_t r = 0; r < d; ++r) {
          const double dr = f[r] - mean[r];
          for (std::size_t c = 0; c <= r; ++c) {
            cov[r * d + c] += dr * (f[c] - mean[c]);
          }
        }
      }
      model.means_.push_back(std::move(mean));
    }
    for (double& v : cov) v /= static_cast<double>(total);
    double trace = 0.0;
    for (std::size_t j = 0; j < d; ++j) trace += cov[j * d + j];
    const double ridge = 1e-6 * trace / static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) cov[j * d + j] += ridge;
    model.chol_ = cholesky(cov, d);
    return model;
  }

  /// -min_k (x - mu_k)' Sigma^-1 (x - mu_k). Larger = more in-distribution.
  double score(std::span<const double> features) const {
    if (dim_ == 0) throw InputError("mahalanobis score: model not fitted");
    if (features.size() != dim_) {
      throw InputError("mahalanobis score: feature dimension " +
                       std::to_string(features.size()) + ", model expects " +
                       std::to_string(dim_));
    }
    double best = kInf;
    std::vector<double> z(dim_);
    for (const auto& mean : means_) {
      // Solve L z = (x - mu) and accumulate |z|^2.
      double dist2 = 0.0;
      for (std::size_t r = 0; r < dim_; ++r) {
        double v = features[r] - mean[r];
        for (std::size_t c = 0; c < r; ++c) v -= chol_[r * dim_ + c] * z[c];
        z[r] = v / chol_[r * dim_ + r];
        dist2 += z[r] * z[r];
      }
      best = std::min(best, dist2);
    }
    return -best;
  }

  std::size_t feature_dim() const { return dim_; }
  std::size_t num_classes() const { return means_.size(); }

 private:
  static std::vector<double> cholesky(const std::vector<double>& cov,
                                      std::size_t d) {
    std::vector<double> chol(d * d, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t c = 0; c <= r; ++c) {
        double sum = cov[r * d + c];
        for (std::size_t k = 0; k < c; ++k) {
          sum -= chol[r * d + k] * chol[c * d + k];
        }
        if (r == c) {
          if (!(sum > 0.0)) {
            throw InputError(
                "mahalanobis fit: covariance singular after regularization");
          }
          chol[r * d + r] = std::sqrt(sum);
        } else {
          chol[r * d + c] = sum / chol[c * d + c];
        }
      }
    }
    return chol;
  }

  std::vector<std::vector<double>> means_;
  std::vector<double> chol_;
  std::size_t dim_ = 0;
};

/// Selects and applies one of the post-hoc ID-scoring algorithms.
class IdScorer {
 public:
  IdScorer(OodAlgorithm algo, double temperature)
      : algo_(algo), temperature_(temperature) {
    if (algo == OodAlgorithm::kMahalanobis) {
      throw InputError("mahalanobis scorer requires a fitted model");
    }
  }

  explicit IdScorer(MahalanobisModel model)
      : algo_(OodAlgorithm::kMahalanobis), model_(std::move(model)) {}

  OodAlgorithm algorithm() const { return algo_; }

  double score(const Detection& det) const {
    switch (algo_) {
      case OodAlgorithm::kEnergy:
        return energy_id_score(det.logits, temperature_);
      case OodAlgorithm::kMsp:
        return msp_id_score(det.logits);
      case OodAlgorithm::kMaxLogit:
        return max_logit_id_score(det.logits);
      case OodAlgorithm::kMahalanobis:
        if (!det.features) {
          throw InputError("mahalanobis: detection carries no features");
        }
        return model_.score(*det.features);
    }
    throw InputError("unknown OOD algorithm");
  }

 private:
  OodAlgorithm algo_;
  double temperature_ = 1.0;
  MahalanobisModel model_;
};

/// Fits a Mahalanobis reference model from the detections themselves,
/// grouping each detection's features under its argmax class. Every
/// detection must carry features.
inline MahalanobisModel fit_mahalanobis_from_detections(
    std::span<const Detection> dets, const ClassSplit& split) {
  std::vector<std::vector<std::vector<double>>> per_class(split.num_classes());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const auto& det = dets[i];
    if (!det.features) {
      throw InputError("mahalanobis: detection " + std::to_string(i) +
                       " carries no features");
    }
    if (det.logits.size() != split.num_classes()) {
      throw InputError("mahalanobis: detection " + std::to_string(i) +
                       " logit length does not match the split");
    }
    per_class[argmax_index(det.logits)].push_back(*det.features);
  }
  return MahalanobisModel::fit(per_class);
}

/// Fused confidence objectness * max softmax; identical to the value
/// decide() stores, so it may be computed lazily before any decision.
inline double fused_confidence(const Detection& det) {
  if (det.confidence) return *det.confidence;
  return det.objectness * msp_id_score(det.logits);
}

/// Applies the open-set decision rule: the detection is called ID when its
/// ID score strictly exceeds cfg.id_thresh (class = argmax over the known
/// set), otherwise unknown (class 0). The confidence is
/// objectness * max softmax regardless of the branch; the box is unchanged.
inline Detection decide(Detection det, const ClassSplit& split,
                        const EvalConfig& cfg, const IdScorer& scorer) {
  if (det.logits.size() != split.num_classes()) {
    throw InputError("decide: detection has " +
                     std::to_string(det.logits.size()) +
                     " logits, split has " +
                     std::to_string(split.num_classes()) + " classes");
  }
  const double score = scorer.score(det);
  det.id_score = score;
  det.confidence = det.objectness * msp_id_score(det.logits);
  if (score > cfg.id_thresh) {
    det.decided_class = split.id_classes()[argmax_index(det.logits)];
  } else {
    det.decided_class = 0;
  }
  return det;
}

}  // namespace osodd
