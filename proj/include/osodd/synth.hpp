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
#include <cstdint>
#include <string>
#include <vector>

#include "osodd/core.hpp"
#include "osodd/partition.hpp"

namespace osodd {

/// Knobs of the synthetic detector. The seed fully determines the output;
/// every random draw is keyed by (seed, stream, image, object), so changing
/// one knob perturbs only the quantities it governs.
struct SynthConfig {
  std::uint64_t seed = 1;
  int num_images = 10;
  int id_classes = 3;   // size of the known set (classes 1..C)
  int ood_classes = 2;  // unknown classes C+1..C+ood_classes
  int objects_min = 1;
  int objects_max = 4;
  double id_score_separation = 4.0;   // mean ID-vs-OOD id-score gap
  double objectness_separation = 4.0; // mean FG-vs-BG objectness-logit gap
  double localization_noise = 0.0;    // box jitter sigma, pixels
  double fp_rate = 0.0;               // background FPs per ground-truth object
  double miss_rate = 0.0;             // chance a ground truth gets no detection

  void validate() const {
    if (num_images <= 0) throw InputError("synth: num_images must be positive");
    if (id_classes <= 0) throw InputError("synth: id_classes must be positive");
    if (ood_classes < 0) {
      throw InputError("synth: ood_classes must be non-negative");
    }
    if (objects_min < 1 || objects_max < objects_min) {
      throw InputError("synth: objects_per_image range must satisfy 1 <= min <= max");
    }
    if (!(fp_rate >= 0.0 && fp_rate <= 1.0)) {
      throw InputError("synth: fp_rate must be in [0, 1]");
    }
    if (!(miss_rate >= 0.0 && miss_rate <= 1.0)) {
      throw InputError("synth: miss_rate must be in [0, 1]");
    }
    if (!(localization_noise >= 0.0)) {
      throw InputError("synth: localization_noise must be non-negative");
    }
  }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Counter-based stream: the state is a hash of (seed, stream, a, b) and
// each draw advances a local counter. Streams never interact.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream, std::uint64_t a = 0,
             std::uint64_t b = 0) {
    state_ = splitmix64(seed);
    state_ = splitmix64(state_ ^ (stream * 0xd6e8feb86659fd93ULL));
    state_ = splitmix64(state_ ^ (a * 0xa0761d6478bd642fULL));
    state_ = splitmix64(state_ ^ (b * 0xe7037ed1a0b428dbULL));
  }

  std::uint64_t next_u64() { return splitmix64(state_ + counter_++ * 0x9e3779b97f4a7c15ULL); }

  double uniform() {  // [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int lo, int hi) {  // inclusive
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  double normal() {
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::uint64_t state_ = 0;
  std::uint64_t counter_ = 0;
};

enum SynthStream : std::uint64_t {
  kStreamObjectCount = 1,
  kStreamClass,
  kStreamGtBox,
  kStreamMiss,
  kStreamLocNoise,
  kStreamLogitFloor,
  kStreamLogitPeak,
  kStreamOodPeakIndex,
  kStreamObjectness,
  kStreamFpCoin,
  kStreamFpBox,
  kStreamFpLogitFloor,
  kStreamFpLogitPeak,
  kStreamFpOodPeakIndex,
  kStreamFpObjectness,
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline Box sample_box(CounterRng& rng, double side) {
  const double w = rng.uniform(32.0, 96.0);
  const double h = rng.uniform(32.0, 96.0);
  const double cx = rng.uniform(w / 2.0, side - w / 2.0);
  const double cy = rng.uniform(h / 2.0, side - h / 2.0);
  return Box{cx, cy, w, h};
}

// Peaked logits: one entry at `peak` plus noise, the rest sunk to a -10
// floor. With the peak at +-separation/2 the ID and OOD score
// distributions coincide at separation 0 and move apart monotonically as
// it grows.
inline std::vector<double> sample_logits(std::uint64_t seed, SynthStream floor_stream,
                                         SynthStream peak_stream, std::uint64_t img,
                                         std::uint64_t obj, int num_classes,
                                         int peak_index, double peak_shift) {
  std::vector<double> logits(static_cast<std::size_t>(num_classes));
  CounterRng floor_rng(seed, floor_stream, img, obj);
  for (auto& l : logits) l = -10.0 - std::abs(0.5 * floor_rng.normal());
  CounterRng peak_rng(seed, peak_stream, img, obj);
  logits[static_cast<std::size_t>(peak_index)] = peak_shift + peak_rng.normal();
  return logits;
}

}  // namespace detail

/// Generates a reproducible bundle: uniformly placed ground truth (pairwise
/// IoU < 0.3), one jittered detection per non-missed object with argmax
/// matching the class for ID objects, and low-objectness background false
/// positives at fp_rate. The supplied EvalConfig is carried into the
/// bundle; the split is {1..id_classes}.
inline DatasetBundle generate(const SynthConfig& synth, EvalConfig cfg = {}) {
  synth.validate();
  cfg.validate();
  const std::uint64_t seed = synth.seed;
  const int C = synth.id_classes;

  // Image side grows with the object budget so placement stays feasible.
  const double side = std::max(
      512.0, 144.0 * std::ceil(std::sqrt(static_cast<double>(synth.objects_max))));

  DatasetBundle bundle;
  bundle.cfg = std::move(cfg);
  std::vector<int> classes(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) classes[static_cast<std::size_t>(c)] = c + 1;
  bundle.split = ClassSplit(classes);

  auto place = [&](detail::CounterRng& rng,
                   const std::vector<Box>& placed, double max_iou,
                   const std::string& what) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const Box box = detail::sample_box(rng, side);
      bool ok = true;
      for (const auto& other : placed) {
        if (iou(box, other) >= max_iou) {
          ok = false;
          break;
        }
      }
      if (ok) return box;
    }
    throw InputError("synth: infeasible " + what +
                     " placement after bounded retries");
  };

  for (int img = 1; img <= synth.num_images; ++img) {
    bundle.images.push_back(ImageInfo{img, static_cast<int>(side),
                                      static_cast<int>(side)});
    const auto u_img = static_cast<std::uint64_t>(img);
    detail::CounterRng count_rng(seed, detail::kStreamObjectCount, u_img);
    const int n_obj = count_rng.uniform_int(synth.objects_min, synth.objects_max);

    std::vector<Box> gt_boxes;
    std::vector<int> gt_classes;
    for (int obj = 0; obj < n_obj; ++obj) {
      const auto u_obj = static_cast<std::uint64_t>(obj);
      detail::CounterRng class_rng(seed, detail::kStreamClass, u_img, u_obj);
      const int dataset_class = class_rng.uniform_int(1, C + synth.ood_classes);
      detail::CounterRng box_rng(seed, detail::kStreamGtBox, u_img, u_obj);
      const Box box = place(box_rng, gt_boxes, 0.3, "ground-truth");
      gt_boxes.push_back(box);
      gt_classes.push_back(dataset_class);
      bundle.gts.push_back(GroundTruthObject{img, box, dataset_class});
    }

    for (int obj = 0; obj < n_obj; ++obj) {
      const auto u_obj = static_cast<std::uint64_t>(obj);
      detail::CounterRng miss_rng(seed, detail::kStreamMiss, u_img, u_obj);
      if (miss_rng.uniform() < synth.miss_rate) continue;

      Detection det;
      det.image_id = img;
      Box box = gt_boxes[static_cast<std::size_t>(obj)];
      if (synth.localization_noise > 0.0) {
        detail::CounterRng loc_rng(seed, detail::kStreamLocNoise, u_img, u_obj);
        box.cx += synth.localization_noise * loc_rng.normal();
        box.cy += synth.localization_noise * loc_rng.normal();
        box.w = std::max(4.0, box.w + synth.localization_noise * loc_rng.normal());
        box.h = std::max(4.0, box.h + synth.localization_noise * loc_rng.normal());
      }
      det.box = box;

      const int dataset_class = gt_classes[static_cast<std::size_t>(obj)];
      const bool is_id = dataset_class <= C;
      int peak_index;
      if (is_id) {
        peak_index = dataset_class - 1;
      } else {
        detail::CounterRng peak_rng(seed, detail::kStreamOodPeakIndex, u_img, u_obj);
        peak_index = peak_rng.uniform_int(0, C - 1);
      }
      const double shift =
          (is_id ? 0.5 : -0.5) * synth.id_score_separation;
      det.logits = detail::sample_logits(seed, detail::kStreamLogitFloor,
                                         detail::kStreamLogitPeak, u_img, u_obj,
                                         C, peak_index, shift);
      detail::CounterRng obj_rng(seed, detail::kStreamObjectness, u_img, u_obj);
      det.objectness =
          detail::sigmoid(0.5 * synth.objectness_separation + obj_rng.normal());
      bundle.dets.push_back(std::move(det));
    }

    for (int obj = 0; obj < n_obj; ++obj) {
      const auto u_obj = static_cast<std::uint64_t>(obj);
      detail::CounterRng coin_rng(seed, detail::kStreamFpCoin, u_img, u_obj);
      if (coin_rng.uniform() >= synth.fp_rate) continue;

      Detection det;
      det.image_id = img;
      detail::CounterRng box_rng(seed, detail::kStreamFpBox, u_img, u_obj);
      det.box = place(box_rng, gt_boxes, 0.2, "false-positive");

      detail::CounterRng peak_rng(seed, detail::kStreamFpOodPeakIndex, u_img, u_obj);
      const int peak_index = peak_rng.uniform_int(0, C - 1);
      det.logits = detail::sample_logits(
          seed, detail::kStreamFpLogitFloor, detail::kStreamFpLogitPeak, u_img,
          u_obj, C, peak_index, -0.5 * synth.id_score_separation);
      detail::CounterRng obj_rng(seed, detail::kStreamFpObjectness, u_img, u_obj);
      det.objectness = detail::sigmoid(-0.5 * synth.objectness_separation +
                                       obj_rng.normal());
      bundle.dets.push_back(std::move(det));
    }
  }
  return bundle;
}

}  // namespace osodd
