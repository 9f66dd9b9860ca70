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
#include <numeric>
#include <span>
#include <vector>

#include "osodd/core.hpp"
#include "osodd/decision.hpp"

namespace osodd {

/// Intersection-over-union of two boxes. Symmetric, 1.0 iff identical,
/// 0.0 iff the interiors are disjoint.
inline double iou(const Box& a, const Box& b) {
  const double iw =
      std::min(a.x_max(), b.x_max()) - std::max(a.x_min(), b.x_min());
  if (iw <= 0.0) return 0.0;
  const double ih =
      std::min(a.y_max(), b.y_max()) - std::max(a.y_min(), b.y_min());
  if (ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

/// Outcome of matching one image's detections against its ground truth.
/// labels is parallel to the detections, gt_matched_det parallel to the
/// ground truth (-1 when unmatched); label gt indices point into the
/// ground-truth span the partition ran over.
struct MatchResult {
  std::vector<PartitionLabel> labels;
  std::vector<int> gt_matched_det;
};

namespace detail {

// Greedy, confidence-ordered partitioning over index views. Used directly
// by evaluate() to avoid per-image copies; label gt indices are positions
// in gt_idx.
inline MatchResult match_partition_indexed(
    std::span<const Detection> dets, std::span<const int> det_idx,
    std::span<const GroundTruthObject> gts, std::span<const int> gt_idx,
    const ClassSplit& split, const EvalConfig& cfg,
    std::span<const double> conf) {
  MatchResult result;
  result.labels.resize(det_idx.size());
  result.gt_matched_det.assign(gt_idx.size(), -1);

  std::vector<int> order(det_idx.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double ca = conf[static_cast<std::size_t>(det_idx[a])];
    const double cb = conf[static_cast<std::size_t>(det_idx[b])];
    if (ca != cb) return ca > cb;
    return det_idx[a] < det_idx[b];  // ties by input order
  });

  std::vector<char> gt_taken(gt_idx.size(), 0);
  std::vector<double> max_iou(det_idx.size(), 0.0);
  for (int local : order) {
    const Detection& det = dets[static_cast<std::size_t>(det_idx[local])];
    int best = -1;
    double best_iou = 0.0;
    double best_any = 0.0;
    for (std::size_t g = 0; g < gt_idx.size(); ++g) {
      const double v =
          iou(det.box, gts[static_cast<std::size_t>(gt_idx[g])].box);
      best_any = std::max(best_any, v);
      if (gt_taken[g] || v < cfg.iou_match) continue;
      if (best < 0 || v > best_iou) {
        best = static_cast<int>(g);
        best_iou = v;
      }
    }
    max_iou[static_cast<std::size_t>(local)] = best_any;
    if (best >= 0) {
      gt_taken[static_cast<std::size_t>(best)] = 1;
      result.gt_matched_det[static_cast<std::size_t>(best)] = det_idx[local];
      const auto& gt = gts[static_cast<std::size_t>(gt_idx[best])];
      const auto kind = resolve_gt_kind(gt, split)
                            ? PartitionKind::kIdMatch
                            : PartitionKind::kOodMatch;
      result.labels[static_cast<std::size_t>(local)] =
          PartitionLabel{kind, best};
    }
  }
  for (std::size_t i = 0; i < det_idx.size(); ++i) {
    auto& label = result.labels[i];
    if (label.gt_index >= 0) continue;  // matched above
    label.kind = max_iou[i] < cfg.iou_bg ? PartitionKind::kBackground
                                         : PartitionKind::kIgnored;
    label.gt_index = -1;
  }
  return result;
}

}  // namespace detail

/// Partitions one image's detections into ID/OOD/background/ignored bins.
/// Detections are processed by descending fused confidence (ties by input
/// order); each one claims the unmatched ground-truth box of highest IoU
/// when that IoU >= cfg.iou_match. Unmatched detections become background
/// when their best IoU against any ground truth falls below cfg.iou_bg and
/// are ignored otherwise.
inline MatchResult match_and_partition(std::span<const Detection> dets,
                                       std::span<const GroundTruthObject> gts,
                                       const ClassSplit& split,
                                       const EvalConfig& cfg) {
  cfg.validate();
  std::optional<ImageId> image;
  for (const auto& det : dets) {
    if (image && det.image_id != *image) {
      throw InputError("match_and_partition: detections span multiple images");
    }
    image = det.image_id;
  }
  for (const auto& gt : gts) {
    if (image && gt.image_id != *image) {
      throw InputError(
          "match_and_partition: ground truth does not share the detections' "
          "image");
    }
    if (!image) image = gt.image_id;
  }
  std::vector<int> det_idx(dets.size());
  std::iota(det_idx.begin(), det_idx.end(), 0);
  std::vector<int> gt_idx(gts.size());
  std::iota(gt_idx.begin(), gt_idx.end(), 0);
  std::vector<double> conf(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    conf[i] = fused_confidence(dets[i]);
  }
  return detail::match_partition_indexed(dets, det_idx, gts, gt_idx, split,
                                         cfg, conf);
}

}  // namespace osodd
