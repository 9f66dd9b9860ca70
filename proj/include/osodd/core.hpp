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

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace osodd {

/// Raised for malformed inputs or violated preconditions. Maps to CLI exit code 1.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a requested metric has no defined value on the given data
/// (e.g. AUROC with an empty side). Maps to CLI exit code 2.
class UndefinedMetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Axis-aligned box in center format (pixels). External files use the COCO
/// corner convention [x_min, y_min, w, h] and are converted at ingestion.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double x_min() const { return cx - w / 2.0; }
  double x_max() const { return cx + w / 2.0; }
  double y_min() const { return cy - h / 2.0; }
  double y_max() const { return cy + h / 2.0; }
  double area() const { return w * h; }

  static Box from_corner(double x, double y, double width, double height) {
    return Box{x + width / 2.0, y + height / 2.0, width, height};
  }
  /// Corner-format [x_min, y_min, w, h] of this box.
  std::array<double, 4> to_corner() const {
    return {x_min(), y_min(), w, h};
  }

  bool valid() const {
    return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) &&
           std::isfinite(h) && w > 0.0 && h > 0.0;
  }
};

inline void validate_box(const Box& box, const std::string& context) {
  if (!box.valid()) {
    throw InputError(context + ": degenerate or non-finite box (w=" +
                     std::to_string(box.w) + ", h=" + std::to_string(box.h) +
                     ")");
  }
}

using ImageId = std::int64_t;

/// One predicted region. The decision fields are empty until decide() runs.
struct Detection {
  ImageId image_id = 0;
  Box box;
  std::vector<double> logits;
  double objectness = 0.0;
  std::optional<std::vector<double>> features;

  std::optional<int> decided_class;    // member of the known set, or 0 = unknown
  std::optional<double> confidence;    // objectness * max softmax
  std::optional<double> id_score;      // larger = more in-distribution
};

struct GroundTruthObject {
  ImageId image_id = 0;
  Box box;
  int dataset_class = 0;  // positive id from the ground-truth taxonomy
};

/// The known class set. Any dataset class that neither belongs to it nor
/// resolves through the alias map is out-of-distribution.
class ClassSplit {
 public:
  ClassSplit() = default;

  ClassSplit(std::vector<int> id_classes, std::map<int, int> alias_map = {})
      : id_classes_(std::move(id_classes)) {
    if (id_classes_.empty()) {
      throw InputError("class split: id_classes must be non-empty");
    }
    for (std::size_t i = 0; i < id_classes_.size(); ++i) {
      const int c = id_classes_[i];
      if (c <= 0) {
        throw InputError("class split: class ids must be positive, got " +
                         std::to_string(c));
      }
      if (!index_.emplace(c, static_cast<int>(i)).second) {
        throw InputError("class split: duplicate class id " +
                         std::to_string(c));
      }
    }
    for (const auto& [from, to] : alias_map) {
      if (index_.find(to) == index_.end()) {
        throw InputError("class split: alias target " + std::to_string(to) +
                         " is not an id class");
      }
      alias_.emplace(from, to);
    }
  }

  const std::vector<int>& id_classes() const { return id_classes_; }
  std::size_t num_classes() const { return id_classes_.size(); }

  /// Resolves a dataset class to its in-distribution class id, or nullopt
  /// when the class is out-of-distribution. Direct membership wins over
  /// alias resolution.
  std::optional<int> resolve(int dataset_class) const {
    if (index_.count(dataset_class) != 0) return dataset_class;
    auto it = alias_.find(dataset_class);
    if (it != alias_.end()) return it->second;
    return std::nullopt;
  }

  /// Position of an id class value in the ordered known set.
  std::optional<int> class_index(int id_class) const {
    auto it = index_.find(id_class);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

 private:
  std::vector<int> id_classes_;
  std::unordered_map<int, int> index_;
  std::unordered_map<int, int> alias_;
};

/// resolve_gt_kind: ID(class) when the annotation's class is known (directly
/// or through an alias), OOD otherwise.
inline std::optional<int> resolve_gt_kind(const GroundTruthObject& gt,
                                          const ClassSplit& split) {
  return split.resolve(gt.dataset_class);
}

enum class PartitionKind { kIdMatch, kOodMatch, kBackground, kIgnored };

inline const char* to_string(PartitionKind kind) {
  switch (kind) {
    case PartitionKind::kIdMatch: return "id_match";
    case PartitionKind::kOodMatch: return "ood_match";
    case PartitionKind::kBackground: return "background";
    case PartitionKind::kIgnored: return "ignored";
  }
  return "unknown";
}

/// Per-detection partition outcome. gt_index refers to the ground-truth
/// ordering the partition ran over and is -1 unless the detection matched.
struct PartitionLabel {
  PartitionKind kind = PartitionKind::kIgnored;
  int gt_index = -1;
};

enum class OodAlgorithm { kEnergy, kMsp, kMaxLogit, kMahalanobis };

inline const char* to_string(OodAlgorithm algo) {
  switch (algo) {
    case OodAlgorithm::kEnergy: return "energy";
    case OodAlgorithm::kMsp: return "msp";
    case OodAlgorithm::kMaxLogit: return "max_logit";
    case OodAlgorithm::kMahalanobis: return "mahalanobis";
  }
  return "unknown";
}

inline OodAlgorithm parse_ood_algorithm(const std::string& name) {
  if (name == "energy") return OodAlgorithm::kEnergy;
  if (name == "msp") return OodAlgorithm::kMsp;
  if (name == "max_logit") return OodAlgorithm::kMaxLogit;
  if (name == "mahalanobis") return OodAlgorithm::kMahalanobis;
  throw InputError("unknown OOD algorithm '" + name +
                   "' (expected energy|msp|max_logit|mahalanobis)");
}

namespace detail {
// Integer-scaled grids; (a + b*i)/100 avoids accumulated rounding so grid
// values compare cleanly against ratios like 7/10.
inline std::vector<double> percent_grid(int start, int step, int count) {
  std::vector<double> grid(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    grid[static_cast<std::size_t>(i)] =
        static_cast<double>(start + step * i) / 100.0;
  }
  return grid;
}
}  // namespace detail

inline std::vector<double> default_ar_iou_thresholds() {
  return detail::percent_grid(50, 5, 10);  // 0.50 .. 0.95
}

inline std::vector<double> default_recall_grid() {
  return detail::percent_grid(0, 5, 21);  // 0.00 .. 1.00
}

/// Evaluation-protocol knobs. Defaults follow the protocol constants:
/// match IoU 0.5, background IoU 0.2, k=100 detections per image, a
/// 21-point target-recall grid, and AR averaged over IoU 0.50:0.05:0.95.
struct EvalConfig {
  double temperature = 1.0;
  double id_thresh = -kInf;
  int k_per_image = 100;
  double iou_match = 0.5;
  double iou_bg = 0.2;
  std::vector<double> ar_iou_thresholds = default_ar_iou_thresholds();
  double ap_iou = 0.5;
  OodAlgorithm ood_algorithm = OodAlgorithm::kEnergy;
  std::vector<double> recall_grid = default_recall_grid();
  int histogram_bins = 50;
  int workers = 1;

  void validate() const {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
      throw InputError("config: temperature must be finite and > 0");
    }
    if (std::isnan(id_thresh)) {
      throw InputError("config: id_thresh must not be NaN");
    }
    if (k_per_image <= 0) {
      throw InputError("config: k_per_image must be positive");
    }
    if (!(0.0 <= iou_bg && iou_bg < iou_match && iou_match <= 1.0)) {
      throw InputError("config: requires 0 <= iou_bg < iou_match <= 1");
    }
    if (!(ap_iou > 0.0 && ap_iou <= 1.0)) {
      throw InputError("config: ap_iou must be in (0, 1]");
    }
    if (ar_iou_thresholds.empty()) {
      throw InputError("config: ar_iou_thresholds must be non-empty");
    }
    for (double t : ar_iou_thresholds) {
      if (!(t > 0.0 && t <= 1.0)) {
        throw InputError("config: AR IoU thresholds must be in (0, 1]");
      }
    }
    if (recall_grid.empty()) {
      throw InputError("config: recall_grid must be non-empty");
    }
    for (std::size_t i = 0; i < recall_grid.size(); ++i) {
      const double r = recall_grid[i];
      if (!(r >= 0.0 && r <= 1.0)) {
        throw InputError("config: recall grid points must lie in [0, 1]");
      }
      if (i > 0 && recall_grid[i - 1] > r) {
        throw InputError("config: recall grid must be sorted ascending");
      }
    }
    if (histogram_bins <= 0) {
      throw InputError("config: histogram_bins must be positive");
    }
    if (workers <= 0) {
      throw InputError("config: workers must be positive");
    }
  }
};

struct ImageInfo {
  ImageId id = 0;
  int width = 0;
  int height = 0;
};

/// A fully assembled evaluation input: images, ground truth, detections,
/// the ID/OOD class split, and the protocol configuration.
struct DatasetBundle {
  std::vector<ImageInfo> images;
  std::vector<GroundTruthObject> gts;
  std::vector<Detection> dets;
  ClassSplit split;
  EvalConfig cfg;
};

inline void validate_bundle(const DatasetBundle& bundle) {
  bundle.cfg.validate();
  std::unordered_set<ImageId> ids;
  for (const auto& img : bundle.images) {
    if (!ids.insert(img.id).second) {
      throw InputError("bundle: duplicate image id " + std::to_string(img.id));
    }
  }
  for (std::size_t i = 0; i < bundle.gts.size(); ++i) {
    const auto& gt = bundle.gts[i];
    if (ids.count(gt.image_id) == 0) {
      throw InputError("bundle: ground truth " + std::to_string(i) +
                       " references unknown image " +
                       std::to_string(gt.image_id));
    }
    validate_box(gt.box, "bundle: ground truth " + std::to_string(i));
    if (gt.dataset_class <= 0) {
      throw InputError("bundle: ground truth " + std::to_string(i) +
                       " has non-positive class id");
    }
  }
  const std::size_t num_classes = bundle.split.num_classes();
  for (std::size_t i = 0; i < bundle.dets.size(); ++i) {
    const auto& det = bundle.dets[i];
    if (ids.count(det.image_id) == 0) {
      throw InputError("bundle: detection " + std::to_string(i) +
                       " references unknown image " +
                       std::to_string(det.image_id));
    }
    validate_box(det.box, "bundle: detection " + std::to_string(i));
    if (det.logits.size() != num_classes) {
      throw InputError("bundle: detection " + std::to_string(i) + " has " +
                       std::to_string(det.logits.size()) +
                       " logits, split has " + std::to_string(num_classes) +
                       " classes");
    }
    if (!(det.objectness >= 0.0 && det.objectness <= 1.0)) {
      throw InputError("bundle: detection " + std::to_string(i) +
                       " objectness outside [0, 1]");
    }
  }
}

}  // namespace osodd
