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

#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <numeric>
#include <span>
#include <thread>
#include <utility>
#include <vector>

#include "osodd/core.hpp"
#include "osodd/decision.hpp"
#include "osodd/partition.hpp"

namespace osodd {

namespace detail {

// Runs fn(0..n-1) across `workers` threads. Tasks must write to disjoint
// slots; results are then independent of the worker count.
inline void parallel_for(std::size_t n, int workers,
                         const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const int extra =
      static_cast<int>(std::min<std::size_t>(n, static_cast<std::size_t>(workers))) - 1;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(extra));
  for (int t = 0; t < extra; ++t) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

struct ImageGroups {
  std::vector<ImageId> ids;  // first-appearance order
  std::vector<std::vector<int>> dets_of;
  std::vector<std::vector<int>> gts_of;
};

inline ImageGroups group_by_image(std::span<const Detection> dets,
                                  std::span<const GroundTruthObject> gts) {
  ImageGroups groups;
  std::unordered_map<ImageId, int> index;
  auto slot = [&](ImageId id) {
    auto [it, inserted] = index.emplace(id, static_cast<int>(groups.ids.size()));
    if (inserted) {
      groups.ids.push_back(id);
      groups.dets_of.emplace_back();
      groups.gts_of.emplace_back();
    }
    return it->second;
  };
  for (std::size_t i = 0; i < dets.size(); ++i) {
    groups.dets_of[static_cast<std::size_t>(slot(dets[i].image_id))].push_back(
        static_cast<int>(i));
  }
  for (std::size_t i = 0; i < gts.size(); ++i) {
    groups.gts_of[static_cast<std::size_t>(slot(gts[i].image_id))].push_back(
        static_cast<int>(i));
  }
  return groups;
}

// Fused confidences plus the per-image top-k mask (confidence descending,
// input-order ties).
struct Ranking {
  std::vector<double> conf;
  std::vector<char> kept;
};

inline Ranking rank_and_cap(std::span<const Detection> dets,
                            const ImageGroups& groups, int k) {
  Ranking ranking;
  ranking.conf.resize(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    ranking.conf[i] = fused_confidence(dets[i]);
  }
  ranking.kept.assign(dets.size(), 0);
  for (const auto& det_idx : groups.dets_of) {
    std::vector<int> order(det_idx);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      const double ca = ranking.conf[static_cast<std::size_t>(a)];
      const double cb = ranking.conf[static_cast<std::size_t>(b)];
      if (ca != cb) return ca > cb;
      return a < b;
    });
    const std::size_t keep =
        std::min(order.size(), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < keep; ++i) {
      ranking.kept[static_cast<std::size_t>(order[i])] = 1;
    }
  }
  return ranking;
}

// 101-point interpolated AP over a confidence-ranked TP/FP sequence.
inline double ap_from_flags(std::span<const char> tp_flags,
                            std::size_t num_gt) {
  if (num_gt == 0 || tp_flags.empty()) return 0.0;
  const std::size_t n = tp_flags.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (tp_flags[i]) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
  }
  // Monotone precision envelope from the right.
  std::vector<double> envelope(n);
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    running = std::max(running, precision[i]);
    envelope[i] = running;
  }
  double sum = 0.0;
  std::size_t cut = 0;
  for (int j = 0; j <= 100; ++j) {
    const double r = static_cast<double>(j) / 100.0;
    while (cut < n && recall[cut] < r) ++cut;
    if (cut < n) sum += envelope[cut];
  }
  return sum / 101.0;
}

// Greedy same-image matcher state shared by AP pools and recall sweeps:
// each entry carries its (ground truth index, IoU) candidates precomputed
// at build time so threshold sweeps never recompute IoU.
struct PoolEntry {
  int det = -1;
  double score = 0.0;  // id_score for threshold sweeps
  std::vector<std::pair<int, double>> cands;  // (global gt index, IoU)
};

// Picks this entry's best still-unmatched candidate (highest IoU at or
// above `min_iou`, ties to the lowest ground-truth index) and claims it.
inline bool claim_best(const PoolEntry& entry, double min_iou,
                       std::vector<char>& gt_taken) {
  int best = -1;
  double best_iou = 0.0;
  for (const auto& [gt, v] : entry.cands) {
    if (v < min_iou || gt_taken[static_cast<std::size_t>(gt)]) continue;
    if (best < 0 || v > best_iou) {
      best = gt;
      best_iou = v;
    }
  }
  if (best < 0) return false;
  gt_taken[static_cast<std::size_t>(best)] = 1;
  return true;
}

// Per-class AP pools for mean-AP evaluation, reusable across relabeling
// thresholds (the pool order and candidates are threshold-independent).
struct MapMachine {
  std::vector<std::vector<PoolEntry>> pools;  // per class index
  std::vector<std::size_t> gt_count;          // per class index
  std::size_t total_gts = 0;
  double ap_iou = 0.5;

  // Mean AP over classes with ground truth. When `sweep` is set, entries
  // with score <= threshold count as unknown and are excluded.
  double map_at(double threshold, bool sweep) const {
    double sum = 0.0;
    std::size_t classes = 0;
    std::vector<char> gt_taken;
    std::vector<char> flags;
    for (std::size_t c = 0; c < pools.size(); ++c) {
      if (gt_count[c] == 0) continue;
      ++classes;
      gt_taken.assign(total_gts, 0);
      flags.clear();
      for (const auto& entry : pools[c]) {
        if (sweep && !(entry.score > threshold)) continue;
        flags.push_back(claim_best(entry, ap_iou, gt_taken) ? 1 : 0);
      }
      sum += ap_from_flags(flags, gt_count[c]);
    }
    if (classes == 0) {
      throw UndefinedMetricError("id_map: no in-distribution ground truth");
    }
    return sum / static_cast<double>(classes);
  }
};

// claim(det_index) -> class index the detection competes for, or -1 when it
// is excluded from every pool.
inline MapMachine build_map_machine(
    std::span<const Detection> dets, std::span<const GroundTruthObject> gts,
    const ClassSplit& split, const EvalConfig& cfg, const ImageGroups& groups,
    const Ranking& ranking, const std::function<int(int)>& claim) {
  MapMachine machine;
  machine.ap_iou = cfg.ap_iou;
  machine.total_gts = gts.size();
  const std::size_t num_classes = split.num_classes();
  machine.pools.resize(num_classes);
  machine.gt_count.assign(num_classes, 0);

  // Per image, per class: ground-truth indices (ascending = input order).
  std::vector<int> gt_class(gts.size(), -1);
  std::vector<std::vector<std::vector<int>>> class_gts(
      groups.ids.size(), std::vector<std::vector<int>>(num_classes));
  for (std::size_t img = 0; img < groups.ids.size(); ++img) {
    for (int g : groups.gts_of[img]) {
      const auto resolved = split.resolve(gts[static_cast<std::size_t>(g)].dataset_class);
      if (!resolved) continue;
      const int c = *split.class_index(*resolved);
      gt_class[static_cast<std::size_t>(g)] = c;
      class_gts[img][static_cast<std::size_t>(c)].push_back(g);
      ++machine.gt_count[static_cast<std::size_t>(c)];
    }
  }
  for (std::size_t img = 0; img < groups.ids.size(); ++img) {
    for (int d : groups.dets_of[img]) {
      if (!ranking.kept[static_cast<std::size_t>(d)]) continue;
      const int c = claim(d);
      if (c < 0) continue;
      PoolEntry entry;
      entry.det = d;
      const auto& det = dets[static_cast<std::size_t>(d)];
      entry.score = det.id_score.value_or(0.0);
      for (int g : class_gts[img][static_cast<std::size_t>(c)]) {
        const double v = iou(det.box, gts[static_cast<std::size_t>(g)].box);
        if (v >= cfg.ap_iou) entry.cands.emplace_back(g, v);
      }
      machine.pools[static_cast<std::size_t>(c)].push_back(std::move(entry));
    }
  }
  for (auto& pool : machine.pools) {
    std::sort(pool.begin(), pool.end(),
              [&](const PoolEntry& a, const PoolEntry& b) {
                const double ca = ranking.conf[static_cast<std::size_t>(a.det)];
                const double cb = ranking.conf[static_cast<std::size_t>(b.det)];
                if (ca != cb) return ca > cb;
                return a.det < b.det;
              });
  }
  return machine;
}

// Class-agnostic recall machinery over the top-k proposals per image.
// Entries are in match order (confidence descending); candidates hold all
// overlapping ground truth down to `cand_cutoff` IoU.
struct RecallMachine {
  std::vector<std::vector<PoolEntry>> per_image;
  std::size_t total_gts = 0;

  // Matched count using candidates at or above `min_iou`; when `sweep` is
  // set only entries with score <= threshold (the unknowns) participate.
  std::size_t matched_at(double min_iou, bool sweep, double threshold) const {
    std::vector<char> gt_taken(total_gts, 0);
    std::size_t matched = 0;
    for (const auto& entries : per_image) {
      for (const auto& entry : entries) {
        if (sweep && entry.score > threshold) continue;
        if (claim_best(entry, min_iou, gt_taken)) ++matched;
      }
    }
    return matched;
  }
};

// gt_filter(gt_index) selects which ground truth can be matched;
// det_score(det_index) fills the sweep score.
inline RecallMachine build_recall_machine(
    std::span<const Detection> dets, std::span<const GroundTruthObject> gts,
    const EvalConfig& cfg, const ImageGroups& groups, const Ranking& ranking,
    double cand_cutoff, const std::function<bool(int)>& gt_filter,
    const std::function<double(int)>& det_score) {
  RecallMachine machine;
  machine.total_gts = gts.size();
  machine.per_image.resize(groups.ids.size());
  parallel_for(groups.ids.size(), cfg.workers, [&](std::size_t img) {
    std::vector<int> order;
    for (int d : groups.dets_of[img]) {
      if (ranking.kept[static_cast<std::size_t>(d)]) order.push_back(d);
    }
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      const double ca = ranking.conf[static_cast<std::size_t>(a)];
      const double cb = ranking.conf[static_cast<std::size_t>(b)];
      if (ca != cb) return ca > cb;
      return a < b;
    });
    auto& entries = machine.per_image[img];
    entries.reserve(order.size());
    for (int d : order) {
      PoolEntry entry;
      entry.det = d;
      entry.score = det_score(d);
      const auto& det = dets[static_cast<std::size_t>(d)];
      for (int g : groups.gts_of[img]) {
        if (!gt_filter(g)) continue;
        const double v = iou(det.box, gts[static_cast<std::size_t>(g)].box);
        if (v >= cand_cutoff) entry.cands.emplace_back(g, v);
      }
      entries.push_back(std::move(entry));
    }
  });
  return machine;
}

}  // namespace detail

/// One ranked entry for average_precision: the ranking confidence and
/// whether the detection was a true positive.
struct RankedDetection {
  double confidence = 0.0;
  bool is_tp = false;
};

/// 101-point interpolated average precision over a ranked detection list:
/// the mean over the recall grid {0, 0.01, ..., 1} of the maximum precision
/// among cuts whose recall reaches the grid point. Returns 0 when num_gt
/// is 0 (such classes are excluded upstream).
inline double average_precision(std::span<const RankedDetection> ranked,
                                std::size_t num_gt) {
  std::vector<char> flags;
  flags.reserve(ranked.size());
  for (const auto& r : ranked) flags.push_back(r.is_tp ? 1 : 0);
  return detail::ap_from_flags(flags, num_gt);
}

enum class MapMode { kClosedSet, kOpenSet };

/// Mean average precision over the known classes that have ground truth.
/// Detections are capped at cfg.k_per_image per image by confidence before
/// per-class greedy matching at IoU >= cfg.ap_iou. Closed-set mode pools
/// every detection under its argmax class; open-set mode pools only
/// detections whose decided_class is a known class (unknowns are excluded
/// from every pool).
inline double id_map(std::span<const Detection> dets,
                     std::span<const GroundTruthObject> gts,
                     const ClassSplit& split, const EvalConfig& cfg,
                     MapMode mode) {
  cfg.validate();
  const auto groups = detail::group_by_image(dets, gts);
  const auto ranking = detail::rank_and_cap(dets, groups, cfg.k_per_image);
  std::function<int(int)> claim;
  if (mode == MapMode::kClosedSet) {
    claim = [&](int d) {
      return static_cast<int>(
          argmax_index(dets[static_cast<std::size_t>(d)].logits));
    };
  } else {
    claim = [&](int d) {
      const auto& det = dets[static_cast<std::size_t>(d)];
      if (!det.decided_class) {
        throw InputError("id_map: open-set mode requires decided detections");
      }
      if (*det.decided_class == 0) return -1;
      const auto idx = split.class_index(*det.decided_class);
      if (!idx) {
        throw InputError("id_map: decided class " +
                         std::to_string(*det.decided_class) +
                         " is not in the known set");
      }
      return *idx;
    };
  }
  const auto machine =
      detail::build_map_machine(dets, gts, split, cfg, groups, ranking, claim);
  return machine.map_at(0.0, false);
}

/// Class-agnostic average recall: recall of the top-k proposals per image
/// against all ground truth (ID and OOD alike), averaged over
/// cfg.ar_iou_thresholds.
inline double ca_ar(std::span<const Detection> proposals,
                    std::span<const GroundTruthObject> gts,
                    const EvalConfig& cfg) {
  cfg.validate();
  if (gts.empty()) {
    throw UndefinedMetricError("ca_ar: no ground truth to recall");
  }
  const auto groups = detail::group_by_image(proposals, gts);
  const auto ranking = detail::rank_and_cap(proposals, groups, cfg.k_per_image);
  const double cutoff =
      *std::min_element(cfg.ar_iou_thresholds.begin(), cfg.ar_iou_thresholds.end());
  const auto machine = detail::build_recall_machine(
      proposals, gts, cfg, groups, ranking, cutoff, [](int) { return true; },
      [](int) { return 0.0; });
  double sum = 0.0;
  for (double t : cfg.ar_iou_thresholds) {
    sum += static_cast<double>(machine.matched_at(t, false, 0.0)) /
           static_cast<double>(gts.size());
  }
  return sum / static_cast<double>(cfg.ar_iou_thresholds.size());
}

/// Mann-Whitney AUROC: the fraction of (positive, negative) pairs where the
/// positive outscores the negative, ties counted half.
inline double auroc(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty()) {
    throw UndefinedMetricError("auroc: requires scores on both sides");
  }
  std::vector<double> sorted_neg(neg.begin(), neg.end());
  std::sort(sorted_neg.begin(), sorted_neg.end());
  double numerator = 0.0;
  for (double p : pos) {
    const auto lo =
        std::lower_bound(sorted_neg.begin(), sorted_neg.end(), p);
    const auto hi = std::upper_bound(lo, sorted_neg.end(), p);
    numerator += static_cast<double>(lo - sorted_neg.begin()) +
                 0.5 * static_cast<double>(hi - lo);
  }
  return numerator /
         (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

/// The four separation axes. An axis is absent when either of its sides is
/// empty. Ignored detections take part in no axis.
struct AurocAxes {
  std::optional<double> id_vs_ood;
  std::optional<double> id_vs_nonid;
  std::optional<double> ood_vs_bg;
  std::optional<double> fg_vs_bg;
};

/// ID-vs-OOD and ID-vs-NonID compare ID scores; OOD-vs-BG and FG-vs-BG
/// compare objectness.
inline AurocAxes auroc_axes(std::span<const Detection> dets,
                            std::span<const PartitionLabel> labels) {
  if (dets.size() != labels.size()) {
    throw InputError("auroc_axes: labels must parallel detections");
  }
  std::vector<double> id_scores_id, id_scores_ood, id_scores_bg;
  std::vector<double> obj_id, obj_ood, obj_bg;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const auto kind = labels[i].kind;
    if (kind == PartitionKind::kIgnored) continue;
    if (!dets[i].id_score) {
      throw InputError("auroc_axes: detections must carry id_score");
    }
    const double s = *dets[i].id_score;
    const double o = dets[i].objectness;
    switch (kind) {
      case PartitionKind::kIdMatch:
        id_scores_id.push_back(s);
        obj_id.push_back(o);
        break;
      case PartitionKind::kOodMatch:
        id_scores_ood.push_back(s);
        obj_ood.push_back(o);
        break;
      case PartitionKind::kBackground:
        id_scores_bg.push_back(s);
        obj_bg.push_back(o);
        break;
      case PartitionKind::kIgnored:
        break;
    }
  }
  AurocAxes axes;
  auto axis = [](std::span<const double> pos, std::span<const double> neg)
      -> std::optional<double> {
    if (pos.empty() || neg.empty()) return std::nullopt;
    return auroc(pos, neg);
  };
  axes.id_vs_ood = axis(id_scores_id, id_scores_ood);
  std::vector<double> nonid(id_scores_ood);
  nonid.insert(nonid.end(), id_scores_bg.begin(), id_scores_bg.end());
  axes.id_vs_nonid = axis(id_scores_id, nonid);
  axes.ood_vs_bg = axis(obj_ood, obj_bg);
  std::vector<double> fg(obj_id);
  fg.insert(fg.end(), obj_ood.begin(), obj_ood.end());
  axes.fg_vs_bg = axis(fg, obj_bg);
  return axes;
}

/// Recall of OOD ground truth by unknown-labeled detections among the top-k
/// per image: greedy class-agnostic matching at IoU >= cfg.ap_iou over OOD
/// ground truth only.
inline double ood_recall_at_k(std::span<const Detection> dets,
                              std::span<const GroundTruthObject> gts,
                              const ClassSplit& split, const EvalConfig& cfg) {
  cfg.validate();
  std::size_t total_ood = 0;
  std::vector<char> is_ood(gts.size(), 0);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (!split.resolve(gts[g].dataset_class)) {
      is_ood[g] = 1;
      ++total_ood;
    }
  }
  if (total_ood == 0) {
    throw UndefinedMetricError("ood_recall_at_k: no OOD ground truth");
  }
  for (const auto& det : dets) {
    if (!det.decided_class) {
      throw InputError("ood_recall_at_k: detections must be decided");
    }
  }
  const auto groups = detail::group_by_image(dets, gts);
  const auto ranking = detail::rank_and_cap(dets, groups, cfg.k_per_image);
  // Unknowns get score -1 and the sweep runs at threshold 0, so exactly the
  // decided_class == 0 detections participate.
  const auto machine = detail::build_recall_machine(
      dets, gts, cfg, groups, ranking, cfg.ap_iou,
      [&](int g) { return is_ood[static_cast<std::size_t>(g)] != 0; },
      [&](int d) {
        return *dets[static_cast<std::size_t>(d)].decided_class == 0 ? -1.0
                                                                     : 1.0;
      });
  return static_cast<double>(machine.matched_at(cfg.ap_iou, true, 0.0)) /
         static_cast<double>(total_ood);
}

/// One point of the AOSP sweep: the minimum threshold whose OOD recall
/// reaches target_recall, with the open-set mean AP after relabeling at
/// that threshold. Unreachable targets carry threshold +inf, the maximum
/// achievable recall, and id_map 0.
struct AospCurvePoint {
  double target_recall = 0.0;
  double threshold = 0.0;
  double achieved_ood_recall = 0.0;
  double id_map = 0.0;
};

struct AospResult {
  double aosp = 0.0;
  std::vector<AospCurvePoint> curve;
};

/// Threshold-independent summary: for every target recall in
/// cfg.recall_grid, relabel at the minimum candidate threshold achieving it
/// (candidates are -inf, each observed id_score, +inf; a detection becomes
/// unknown when its id_score <= threshold) and average the resulting
/// open-set mean APs. Targets beyond the maximum achievable recall
/// contribute 0.
inline AospResult aosp(std::span<const Detection> dets,
                       std::span<const GroundTruthObject> gts,
                       const ClassSplit& split, const EvalConfig& cfg) {
  cfg.validate();
  for (const auto& det : dets) {
    if (!det.id_score || !std::isfinite(*det.id_score)) {
      throw InputError("aosp: every detection needs a finite id_score");
    }
  }
  std::size_t total_ood = 0;
  std::vector<char> is_ood(gts.size(), 0);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (!split.resolve(gts[g].dataset_class)) {
      is_ood[g] = 1;
      ++total_ood;
    }
  }
  if (total_ood == 0) {
    throw UndefinedMetricError("aosp: no OOD ground truth");
  }

  const auto groups = detail::group_by_image(dets, gts);
  const auto ranking = detail::rank_and_cap(dets, groups, cfg.k_per_image);
  const auto recall_machine = detail::build_recall_machine(
      dets, gts, cfg, groups, ranking, cfg.ap_iou,
      [&](int g) { return is_ood[static_cast<std::size_t>(g)] != 0; },
      [&](int d) { return *dets[static_cast<std::size_t>(d)].id_score; });
  const auto map_machine = detail::build_map_machine(
      dets, gts, split, cfg, groups, ranking, [&](int d) {
        return static_cast<int>(
            argmax_index(dets[static_cast<std::size_t>(d)].logits));
      });

  std::vector<double> thresholds;
  thresholds.reserve(dets.size() + 2);
  thresholds.push_back(-kInf);
  for (const auto& det : dets) thresholds.push_back(*det.id_score);
  std::sort(thresholds.begin() + 1, thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());
  thresholds.push_back(kInf);

  auto recall_at = [&](double t) {
    return static_cast<double>(recall_machine.matched_at(cfg.ap_iou, true, t)) /
           static_cast<double>(total_ood);
  };
  const double max_recall = recall_at(kInf);

  // Raising the threshold only grows the unknown pool, and growing a greedy
  // pool never loses matches, so recall is non-decreasing in the threshold
  // and the minimum achieving threshold is a binary search.
  AospResult result;
  result.curve.resize(cfg.recall_grid.size());
  detail::parallel_for(cfg.recall_grid.size(), cfg.workers, [&](std::size_t i) {
    auto& point = result.curve[i];
    point.target_recall = cfg.recall_grid[i];
    if (max_recall < point.target_recall) {
      point.threshold = kInf;
      point.achieved_ood_recall = max_recall;
      point.id_map = 0.0;
      return;
    }
    std::size_t lo = 0;
    std::size_t hi = thresholds.size() - 1;  // recall_at(+inf) >= target
    while (lo < hi) {
      const std::size_t mid = (lo + hi) / 2;
      if (recall_at(thresholds[mid]) >= point.target_recall) {
        hi = mid;
      } else {
        lo = mid + 1;
      }
    }
    point.threshold = thresholds[lo];
    point.achieved_ood_recall = recall_at(point.threshold);
    point.id_map = -1.0;  // filled below, deduplicated by threshold
  });
  // Evaluate the open-set mean AP once per distinct selected threshold.
  std::vector<double> distinct;
  for (const auto& point : result.curve) {
    if (point.id_map < 0.0) distinct.push_back(point.threshold);
  }
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()),
                 distinct.end());
  std::vector<double> map_values(distinct.size());
  detail::parallel_for(distinct.size(), cfg.workers, [&](std::size_t i) {
    map_values[i] = map_machine.map_at(distinct[i], true);
  });
  for (auto& point : result.curve) {
    if (point.id_map < 0.0) {
      const auto it =
          std::lower_bound(distinct.begin(), distinct.end(), point.threshold);
      point.id_map = map_values[static_cast<std::size_t>(it - distinct.begin())];
    }
  }
  double sum = 0.0;
  for (const auto& point : result.curve) sum += point.id_map;
  result.aosp = sum / static_cast<double>(result.curve.size());
  return result;
}

/// Equal-width histogram counts of one quantity for the ID/OOD/BG bins.
/// The range spans the minimum and maximum across all three bins; a single
/// degenerate bin is produced when every value is identical, and empty
/// series when there is no data.
struct HistogramSeries {
  std::vector<double> bin_edges;
  std::vector<std::int64_t> id_match;
  std::vector<std::int64_t> ood_match;
  std::vector<std::int64_t> background;
};

struct HistogramSet {
  HistogramSeries id_score;
  HistogramSeries objectness;
};

namespace detail {

inline HistogramSeries bin_series(const std::vector<double>& values,
                                  std::span<const PartitionKind> kinds,
                                  int bins) {
  HistogramSeries series;
  if (values.empty()) return series;
  double lo = values[0], hi = values[0];
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const int actual_bins = lo == hi ? 1 : bins;
  series.bin_edges.resize(static_cast<std::size_t>(actual_bins) + 1);
  for (int i = 0; i <= actual_bins; ++i) {
    series.bin_edges[static_cast<std::size_t>(i)] =
        lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(actual_bins);
  }
  series.id_match.assign(static_cast<std::size_t>(actual_bins), 0);
  series.ood_match.assign(static_cast<std::size_t>(actual_bins), 0);
  series.background.assign(static_cast<std::size_t>(actual_bins), 0);
  for (std::size_t i = 0; i < values.size(); ++i) {
    int bin = 0;
    if (hi > lo) {
      bin = static_cast<int>(std::floor((values[i] - lo) / (hi - lo) *
                                        static_cast<double>(actual_bins)));
      bin = std::clamp(bin, 0, actual_bins - 1);
    }
    auto& counts = kinds[i] == PartitionKind::kIdMatch ? series.id_match
                   : kinds[i] == PartitionKind::kOodMatch
                       ? series.ood_match
                       : series.background;
    ++counts[static_cast<std::size_t>(bin)];
  }
  return series;
}

}  // namespace detail

/// ID-score and objectness histograms of the partitioned detections
/// (ignored detections excluded).
inline HistogramSet histograms(std::span<const Detection> dets,
                               std::span<const PartitionLabel> labels,
                               int bins) {
  if (dets.size() != labels.size()) {
    throw InputError("histograms: labels must parallel detections");
  }
  if (bins <= 0) throw InputError("histograms: bins must be positive");
  std::vector<double> scores, objectness;
  std::vector<PartitionKind> kinds;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (labels[i].kind == PartitionKind::kIgnored) continue;
    if (!dets[i].id_score) {
      throw InputError("histograms: detections must carry id_score");
    }
    scores.push_back(*dets[i].id_score);
    objectness.push_back(dets[i].objectness);
    kinds.push_back(labels[i].kind);
  }
  HistogramSet set;
  set.id_score = detail::bin_series(scores, kinds, bins);
  set.objectness = detail::bin_series(objectness, kinds, bins);
  return set;
}

/// Everything the protocol reports for one dataset.
struct EvalReport {
  double aosp = 0.0;
  double id_map_closed = 0.0;
  double ca_ar = 0.0;
  AurocAxes auroc;
  std::vector<AospCurvePoint> curve;
  HistogramSet histograms;
  EvalConfig config;
};

/// Scores every detection with the configured algorithm (fitting the
/// Mahalanobis model from the detections' own features, grouped by argmax
/// class, when selected) and applies the decision rule at cfg.id_thresh.
inline std::vector<Detection> score_and_decide(const DatasetBundle& bundle) {
  std::optional<IdScorer> scorer;
  if (bundle.cfg.ood_algorithm == OodAlgorithm::kMahalanobis) {
    scorer.emplace(fit_mahalanobis_from_detections(bundle.dets, bundle.split));
  } else {
    scorer.emplace(bundle.cfg.ood_algorithm, bundle.cfg.temperature);
  }
  std::vector<Detection> scored;
  scored.reserve(bundle.dets.size());
  for (const auto& det : bundle.dets) {
    scored.push_back(decide(det, bundle.split, bundle.cfg, *scorer));
  }
  return scored;
}

/// Runs the full evaluation protocol over a bundle. Results are
/// deterministic for identical inputs regardless of cfg.workers.
inline EvalReport evaluate(const DatasetBundle& bundle) {
  validate_bundle(bundle);
  const auto scored = score_and_decide(bundle);
  const auto& gts = bundle.gts;
  const auto& cfg = bundle.cfg;

  const auto groups = detail::group_by_image(scored, gts);
  std::vector<double> conf(scored.size());
  for (std::size_t i = 0; i < scored.size(); ++i) {
    conf[i] = fused_confidence(scored[i]);
  }
  std::vector<PartitionLabel> labels(scored.size());
  detail::parallel_for(groups.ids.size(), cfg.workers, [&](std::size_t img) {
    const auto result = detail::match_partition_indexed(
        scored, groups.dets_of[img], gts, groups.gts_of[img], bundle.split,
        cfg, conf);
    for (std::size_t i = 0; i < groups.dets_of[img].size(); ++i) {
      PartitionLabel label = result.labels[i];
      if (label.gt_index >= 0) {
        label.gt_index = groups.gts_of[img][static_cast<std::size_t>(label.gt_index)];
      }
      labels[static_cast<std::size_t>(groups.dets_of[img][i])] = label;
    }
  });

  EvalReport report;
  report.config = cfg;
  report.id_map_closed =
      id_map(scored, gts, bundle.split, cfg, MapMode::kClosedSet);
  report.ca_ar = ca_ar(scored, gts, cfg);
  report.auroc = auroc_axes(scored, labels);
  report.histograms = histograms(scored, labels, cfg.histogram_bins);
  auto aosp_result = aosp(scored, gts, bundle.split, cfg);
  report.aosp = aosp_result.aosp;
  report.curve = std::move(aosp_result.curve);
  return report;
}

}  // namespace osodd
