#include "catch_amalgamated.hpp"
#include "osodd/metrics.hpp"

#include <random>

#include "oracles.hpp"
#include "osodd/synth.hpp"

using namespace osodd;

namespace {

Detection make_det(ImageId img, Box box, std::vector<double> logits,
                   double objectness) {
  Detection det;
  det.image_id = img;
  det.box = box;
  det.logits = std::move(logits);
  det.objectness = objectness;
  return det;
}

std::vector<Detection> scored(const DatasetBundle& bundle) {
  return score_and_decide(bundle);
}

DatasetBundle small_synth(std::uint64_t seed, double separation = 3.0,
                          double fp_rate = 0.4, double miss_rate = 0.2) {
  SynthConfig synth;
  synth.seed = seed;
  synth.num_images = 4;
  synth.id_classes = 2;
  synth.ood_classes = 2;
  synth.objects_min = 1;
  synth.objects_max = 3;
  synth.id_score_separation = separation;
  synth.objectness_separation = 3.0;
  synth.localization_noise = 6.0;
  synth.fp_rate = fp_rate;
  synth.miss_rate = miss_rate;
  return generate(synth);
}

}  // namespace

TEST_CASE("average precision basic cases") {
  const std::vector<RankedDetection> perfect{{0.9, true}};
  CHECK(average_precision(perfect, 1) == 1.0);

  CHECK(average_precision(std::vector<RankedDetection>{}, 3) == 0.0);

  const std::vector<RankedDetection> mixed{{0.9, true}, {0.8, false},
                                           {0.7, true}};
  const double expected = (51.0 * 1.0 + 50.0 * (2.0 / 3.0)) / 101.0;
  CHECK(average_precision(mixed, 2) == Catch::Approx(expected).epsilon(1e-12));
  CHECK(average_precision(mixed, 2) ==
        Catch::Approx(oracles::ap_envelope({1, 0, 1}, 2)).epsilon(1e-15));

  // A leading false positive caps every grid point's precision.
  const std::vector<RankedDetection> fp_first{{0.9, false}, {0.8, true}};
  CHECK(average_precision(fp_first, 1) == 0.5);
}

TEST_CASE("average precision matches the envelope oracle on random runs") {
  std::mt19937 gen(77);
  for (int inst = 0; inst < 300; ++inst) {
    const int n = oracles::uniform_int(gen, 0, 10);
    const std::size_t num_gt =
        static_cast<std::size_t>(oracles::uniform_int(gen, 1, 5));
    std::vector<RankedDetection> ranked;
    std::vector<char> flags;
    std::size_t tp_budget = num_gt;
    for (int i = 0; i < n; ++i) {
      const bool tp = tp_budget > 0 && oracles::u01(gen) < 0.5;
      if (tp) --tp_budget;
      ranked.push_back({1.0 - 0.01 * i, tp});
      flags.push_back(tp ? 1 : 0);
    }
    CHECK(average_precision(ranked, num_gt) ==
          Catch::Approx(oracles::ap_envelope(flags, num_gt)).margin(1e-14));
  }
}

TEST_CASE("id_map on hand-built scenes") {
  const ClassSplit split({1, 2});
  EvalConfig cfg;

  SECTION("perfect one-to-one detections give 1.0") {
    std::vector<GroundTruthObject> gts{
        {1, Box{20, 20, 10, 10}, 1},
        {1, Box{60, 60, 10, 10}, 2},
        {2, Box{40, 40, 10, 10}, 1},
    };
    std::vector<Detection> dets{
        make_det(1, Box{20, 20, 10, 10}, {3.0, 0.0}, 0.9),
        make_det(1, Box{60, 60, 10, 10}, {0.0, 3.0}, 0.9),
        make_det(2, Box{40, 40, 10, 10}, {3.0, 0.0}, 0.9),
    };
    CHECK(id_map(dets, gts, split, cfg, MapMode::kClosedSet) == 1.0);
  }

  SECTION("open-set mode with everything unknown gives 0.0") {
    std::vector<GroundTruthObject> gts{{1, Box{20, 20, 10, 10}, 1}};
    std::vector<Detection> dets{
        make_det(1, Box{20, 20, 10, 10}, {3.0, 0.0}, 0.9)};
    dets[0].decided_class = 0;
    dets[0].confidence = 0.5;
    CHECK(id_map(dets, gts, split, cfg, MapMode::kOpenSet) == 0.0);
  }

  SECTION("open-set mode requires decided detections") {
    std::vector<GroundTruthObject> gts{{1, Box{20, 20, 10, 10}, 1}};
    std::vector<Detection> dets{
        make_det(1, Box{20, 20, 10, 10}, {3.0, 0.0}, 0.9)};
    CHECK_THROWS_AS(id_map(dets, gts, split, cfg, MapMode::kOpenSet),
                    InputError);
  }

  SECTION("no ID ground truth is an undefined metric") {
    std::vector<GroundTruthObject> gts{{1, Box{20, 20, 10, 10}, 9}};
    std::vector<Detection> dets{
        make_det(1, Box{20, 20, 10, 10}, {3.0, 0.0}, 0.9)};
    CHECK_THROWS_AS(id_map(dets, gts, split, cfg, MapMode::kClosedSet),
                    UndefinedMetricError);
  }

  SECTION("misclassified detection matches the oracle") {
    std::vector<GroundTruthObject> gts{
        {1, Box{20, 20, 10, 10}, 1},
        {1, Box{60, 60, 10, 10}, 2},
    };
    std::vector<Detection> dets{
        make_det(1, Box{20, 20, 10, 10}, {3.0, 0.0}, 0.9),
        // Wrong class at the class-2 location, outranking the class-1 TP.
        make_det(1, Box{60, 60, 10, 10}, {2.5, 0.0}, 0.95),
        make_det(1, Box{60, 61, 10, 10}, {0.0, 1.5}, 0.4),
    };
    const double lib = id_map(dets, gts, split, cfg, MapMode::kClosedSet);
    const double oracle = oracles::open_map_at(dets, gts, split, cfg, -kInf);
    CHECK(lib == Catch::Approx(oracle).margin(1e-14));
    CHECK(lib == Catch::Approx(0.75).margin(1e-12));  // class1 AP 0.5, class2 AP 1
  }

  SECTION("the per-image cap drops low-confidence detections") {
    cfg.k_per_image = 1;
    std::vector<GroundTruthObject> gts{
        {1, Box{20, 20, 10, 10}, 1},
        {1, Box{60, 60, 10, 10}, 1},
    };
    std::vector<Detection> dets{
        make_det(1, Box{20, 20, 10, 10}, {3.0, 0.0}, 0.9),
        make_det(1, Box{60, 60, 10, 10}, {3.0, 0.0}, 0.5),
    };
    // Only the first detection survives the cap: recall stops at 0.5.
    const double expected = 51.0 / 101.0;
    CHECK(id_map(dets, gts, split, cfg, MapMode::kClosedSet) ==
          Catch::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("ca_ar basics and the threshold-enumeration oracle") {
  const EvalConfig cfg;

  std::vector<GroundTruthObject> gts{
      {1, Box{20, 20, 10, 10}, 1},
      {1, Box{60, 60, 10, 10}, 9},
  };

  SECTION("proposals identical to ground truth recall everything") {
    std::vector<Detection> dets{
        make_det(1, Box{20, 20, 10, 10}, {1.0}, 0.9),
        make_det(1, Box{60, 60, 10, 10}, {1.0}, 0.8),
    };
    CHECK(ca_ar(dets, gts, cfg) == 1.0);
  }

  SECTION("no proposals recall nothing") {
    CHECK(ca_ar(std::vector<Detection>{}, gts, cfg) == 0.0);
  }

  SECTION("empty ground truth is undefined") {
    CHECK_THROWS_AS(
        ca_ar(std::vector<Detection>{}, std::vector<GroundTruthObject>{}, cfg),
        UndefinedMetricError);
  }

  SECTION("a single proposal at IoU 0.7 is recalled at half the thresholds") {
    // Nested boxes: areas 70 and 100 give IoU exactly 70/100.
    std::vector<GroundTruthObject> one_gt{{1, Box::from_corner(0, 0, 10, 10), 1}};
    std::vector<Detection> dets{
        make_det(1, Box::from_corner(0, 0, 7, 10), {1.0}, 0.9)};
    CHECK(ca_ar(dets, one_gt, cfg) == Catch::Approx(0.5).margin(1e-12));
    // Oracle: count the thresholds at which the proposal is recalled.
    double sum = 0.0;
    for (double t : cfg.ar_iou_thresholds) {
      if (oracles::iou(dets[0].box, one_gt[0].box) >= t) sum += 1.0;
    }
    CHECK(ca_ar(dets, one_gt, cfg) ==
          Catch::Approx(sum / static_cast<double>(cfg.ar_iou_thresholds.size()))
              .margin(1e-15));
  }

  SECTION("the top-k cap can hide the right proposal") {
    EvalConfig capped = cfg;
    capped.k_per_image = 1;
    std::vector<Detection> dets{
        make_det(1, Box{200, 200, 10, 10}, {1.0}, 0.9),  // matches nothing
        make_det(1, Box{20, 20, 10, 10}, {1.0}, 0.5),
    };
    CHECK(ca_ar(dets, gts, capped) == 0.0);
  }
}

TEST_CASE("auroc examples and error paths") {
  CHECK(auroc(std::vector<double>{2, 3}, std::vector<double>{0, 1}) == 1.0);
  CHECK(auroc(std::vector<double>{1, 1, 1}, std::vector<double>{1, 1}) == 0.5);
  CHECK(auroc(std::vector<double>{1, 3}, std::vector<double>{2, 4}) == 0.25);
  CHECK_THROWS_AS(auroc(std::vector<double>{}, std::vector<double>{1}),
                  UndefinedMetricError);
  CHECK_THROWS_AS(auroc(std::vector<double>{1}, std::vector<double>{}),
                  UndefinedMetricError);
}

TEST_CASE("auroc equals the pairwise count exactly, with ties") {
  std::mt19937 gen(99);
  for (int inst = 0; inst < 300; ++inst) {
    const int np = oracles::uniform_int(gen, 1, 50);
    const int nn = oracles::uniform_int(gen, 1, 50);
    std::vector<double> pos, neg;
    for (int i = 0; i < np; ++i) {
      pos.push_back(oracles::u01(gen) < 0.5
                        ? static_cast<double>(oracles::uniform_int(gen, 0, 9))
                        : oracles::uniform(gen, 0, 9));
    }
    for (int i = 0; i < nn; ++i) {
      neg.push_back(oracles::u01(gen) < 0.5
                        ? static_cast<double>(oracles::uniform_int(gen, 0, 9))
                        : oracles::uniform(gen, 0, 9));
    }
    CHECK(auroc(pos, neg) == oracles::auroc_pairwise(pos, neg));
  }
}

TEST_CASE("auroc is invariant under strictly increasing transforms") {
  std::mt19937 gen(101);
  for (int inst = 0; inst < 50; ++inst) {
    std::vector<double> pos, neg;
    for (int i = 0; i < 20; ++i) {
      pos.push_back(static_cast<double>(oracles::uniform_int(gen, -4, 4)));
      neg.push_back(static_cast<double>(oracles::uniform_int(gen, -4, 4)));
    }
    auto cube = [](std::vector<double> v) {
      for (auto& x : v) x = x * x * x;
      return v;
    };
    CHECK(auroc(pos, neg) == auroc(cube(pos), cube(neg)));
  }
}

TEST_CASE("auroc axes route scores to the right sides") {
  std::vector<Detection> dets;
  std::vector<PartitionLabel> labels;
  auto add = [&](PartitionKind kind, double id_score, double objectness) {
    Detection det = make_det(1, Box{10, 10, 4, 4}, {0.0}, objectness);
    det.id_score = id_score;
    dets.push_back(det);
    labels.push_back({kind, kind == PartitionKind::kIdMatch ||
                                kind == PartitionKind::kOodMatch
                            ? 0
                            : -1});
  };

  SECTION("clean separation gives 1.0 on the score axes") {
    add(PartitionKind::kIdMatch, 10.0, 0.9);
    add(PartitionKind::kIdMatch, 10.0, 0.8);
    add(PartitionKind::kOodMatch, 0.0, 0.7);
    add(PartitionKind::kBackground, 0.0, 0.1);
    const auto axes = auroc_axes(dets, labels);
    CHECK(axes.id_vs_ood == 1.0);
    CHECK(axes.id_vs_nonid == 1.0);
    CHECK(axes.ood_vs_bg == 1.0);
    CHECK(axes.fg_vs_bg == 1.0);
  }

  SECTION("identical objectness everywhere gives 0.5 on objectness axes") {
    add(PartitionKind::kIdMatch, 5.0, 0.5);
    add(PartitionKind::kOodMatch, 1.0, 0.5);
    add(PartitionKind::kBackground, 0.5, 0.5);
    const auto axes = auroc_axes(dets, labels);
    CHECK(axes.ood_vs_bg == 0.5);
    CHECK(axes.fg_vs_bg == 0.5);
  }

  SECTION("a six-detection fixture matches the pairwise oracle") {
    add(PartitionKind::kIdMatch, 4.0, 0.9);
    add(PartitionKind::kIdMatch, 2.0, 0.6);
    add(PartitionKind::kOodMatch, 3.0, 0.7);
    add(PartitionKind::kOodMatch, 1.0, 0.8);
    add(PartitionKind::kBackground, 2.5, 0.2);
    add(PartitionKind::kIgnored, 99.0, 0.99);  // excluded everywhere
    const auto axes = auroc_axes(dets, labels);
    CHECK(*axes.id_vs_ood ==
          oracles::auroc_pairwise(std::vector<double>{4, 2},
                                  std::vector<double>{3, 1}));
    CHECK(*axes.id_vs_nonid ==
          oracles::auroc_pairwise(std::vector<double>{4, 2},
                                  std::vector<double>{3, 1, 2.5}));
    CHECK(*axes.ood_vs_bg ==
          oracles::auroc_pairwise(std::vector<double>{0.7, 0.8},
                                  std::vector<double>{0.2}));
    CHECK(*axes.fg_vs_bg ==
          oracles::auroc_pairwise(std::vector<double>{0.9, 0.6, 0.7, 0.8},
                                  std::vector<double>{0.2}));
  }

  SECTION("an empty side leaves the axis absent") {
    add(PartitionKind::kIdMatch, 4.0, 0.9);
    add(PartitionKind::kOodMatch, 3.0, 0.7);
    const auto axes = auroc_axes(dets, labels);
    CHECK(axes.id_vs_ood.has_value());
    CHECK_FALSE(axes.ood_vs_bg.has_value());
    CHECK_FALSE(axes.fg_vs_bg.has_value());
  }
}

TEST_CASE("ood_recall_at_k on hand-built scenes") {
  const ClassSplit split({1});
  EvalConfig cfg;
  std::vector<GroundTruthObject> gts{
      {1, Box{20, 20, 10, 10}, 9},
      {2, Box{60, 60, 10, 10}, 9},
  };

  auto unknown_at = [&](Box box, ImageId img, int decided) {
    Detection det = make_det(img, box, {1.0}, 0.8);
    det.decided_class = decided;
    det.confidence = 0.8;
    det.id_score = 0.0;
    return det;
  };

  SECTION("full coverage") {
    std::vector<Detection> dets{
        unknown_at(Box{20, 20, 10, 10}, 1, 0),
        unknown_at(Box{60, 60, 10, 10}, 2, 0),
    };
    CHECK(ood_recall_at_k(dets, gts, split, cfg) == 1.0);
  }

  SECTION("everything decided ID recalls nothing") {
    std::vector<Detection> dets{
        unknown_at(Box{20, 20, 10, 10}, 1, 1),
        unknown_at(Box{60, 60, 10, 10}, 2, 1),
    };
    CHECK(ood_recall_at_k(dets, gts, split, cfg) == 0.0);
  }

  SECTION("one of two covered") {
    std::vector<Detection> dets{unknown_at(Box{20, 20, 10, 10}, 1, 0)};
    CHECK(ood_recall_at_k(dets, gts, split, cfg) == 0.5);
  }

  SECTION("no OOD ground truth is undefined") {
    std::vector<GroundTruthObject> id_only{{1, Box{20, 20, 10, 10}, 1}};
    CHECK_THROWS_AS(
        ood_recall_at_k(std::vector<Detection>{}, id_only, split, cfg),
        UndefinedMetricError);
  }

  SECTION("undecided detections are an input error") {
    std::vector<Detection> dets{make_det(1, Box{20, 20, 10, 10}, {1.0}, 0.8)};
    CHECK_THROWS_AS(ood_recall_at_k(dets, gts, split, cfg), InputError);
  }
}

TEST_CASE("aosp on hand-built scenes") {
  const ClassSplit split({1});
  EvalConfig cfg;

  SECTION("no detections at all") {
    std::vector<GroundTruthObject> gts{
        {1, Box{20, 20, 10, 10}, 1},
        {1, Box{60, 60, 10, 10}, 9},
    };
    const auto result = aosp(std::vector<Detection>{}, gts, split, cfg);
    CHECK(result.aosp == 0.0);
    REQUIRE(result.curve.size() == 21);
    for (const auto& point : result.curve) CHECK(point.id_map == 0.0);
  }

  SECTION("an ID and an OOD detection in perfect positions give 1.0") {
    std::vector<GroundTruthObject> gts{
        {1, Box{20, 20, 10, 10}, 1},
        {1, Box{60, 60, 10, 10}, 9},
    };
    std::vector<Detection> dets{
        make_det(1, Box{20, 20, 10, 10}, {5.0}, 0.9),
        make_det(1, Box{60, 60, 10, 10}, {1.0}, 0.8),
    };
    dets[0].id_score = 5.0;
    dets[1].id_score = 1.0;
    const auto result = aosp(dets, gts, split, cfg);
    CHECK(result.aosp == 1.0);
    for (const auto& point : result.curve) {
      CHECK(point.id_map == 1.0);
      CHECK(point.achieved_ood_recall >= point.target_recall);
    }
    // Oracle agreement.
    const auto [oracle_value, oracle_points] =
        oracles::aosp_sweep(dets, gts, split, cfg);
    CHECK(result.aosp == Catch::Approx(oracle_value).margin(1e-14));
  }

  SECTION("unreachable targets contribute zero") {
    // Two OOD ground truths, only one coverable: max recall 0.5, so the 10
    // targets above 0.5 contribute id_map 0.
    std::vector<GroundTruthObject> gts{
        {1, Box{20, 20, 10, 10}, 1},
        {1, Box{60, 60, 10, 10}, 9},
        {1, Box{100, 100, 10, 10}, 9},
    };
    std::vector<Detection> dets{
        make_det(1, Box{20, 20, 10, 10}, {5.0}, 0.9),
        make_det(1, Box{60, 60, 10, 10}, {1.0}, 0.8),
    };
    dets[0].id_score = 5.0;
    dets[1].id_score = 1.0;
    const auto result = aosp(dets, gts, split, cfg);
    std::size_t zeros = 0;
    for (const auto& point : result.curve) {
      if (point.target_recall > 0.5) {
        CHECK(point.id_map == 0.0);
        CHECK(point.threshold == kInf);
        CHECK(point.achieved_ood_recall == 0.5);
        ++zeros;
      } else {
        CHECK(point.id_map == 1.0);
      }
    }
    CHECK(zeros == 10);
    CHECK(result.aosp == Catch::Approx(11.0 / 21.0).epsilon(1e-12));
    const auto [oracle_value, oracle_points] =
        oracles::aosp_sweep(dets, gts, split, cfg);
    CHECK(result.aosp == Catch::Approx(oracle_value).margin(1e-14));
  }

  SECTION("zero OOD ground truth is undefined") {
    std::vector<GroundTruthObject> gts{{1, Box{20, 20, 10, 10}, 1}};
    std::vector<Detection> dets{make_det(1, Box{20, 20, 10, 10}, {5.0}, 0.9)};
    dets[0].id_score = 5.0;
    CHECK_THROWS_AS(aosp(dets, gts, split, cfg), UndefinedMetricError);
  }

  SECTION("missing id_score is an input error") {
    std::vector<GroundTruthObject> gts{{1, Box{20, 20, 10, 10}, 9}};
    std::vector<Detection> dets{make_det(1, Box{20, 20, 10, 10}, {5.0}, 0.9)};
    CHECK_THROWS_AS(aosp(dets, gts, split, cfg), InputError);
  }
}

TEST_CASE("aosp curve is monotone and matches the sweep oracle on synth data") {
  for (std::uint64_t seed : {3u, 5u, 8u}) {
    const auto bundle = small_synth(seed);
    const auto dets = scored(bundle);
    const auto result = aosp(dets, bundle.gts, bundle.split, bundle.cfg);
    for (std::size_t i = 1; i < result.curve.size(); ++i) {
      CHECK(result.curve[i].threshold >= result.curve[i - 1].threshold);
      CHECK(result.curve[i].achieved_ood_recall >=
            result.curve[i - 1].achieved_ood_recall);
      CHECK(result.curve[i].target_recall > result.curve[i - 1].target_recall);
    }
    const auto [oracle_value, oracle_points] =
        oracles::aosp_sweep(dets, bundle.gts, bundle.split, bundle.cfg);
    CHECK(result.aosp == Catch::Approx(oracle_value).margin(1e-12));
    for (std::size_t i = 0; i < result.curve.size(); ++i) {
      CHECK(result.curve[i].threshold == oracle_points[i].threshold);
      CHECK(result.curve[i].id_map ==
            Catch::Approx(oracle_points[i].map).margin(1e-12));
    }
  }
}

TEST_CASE("raising the threshold never shrinks the unknown set") {
  const auto bundle = small_synth(13);
  const auto dets = scored(bundle);
  std::vector<double> scores;
  for (const auto& det : dets) scores.push_back(*det.id_score);
  std::sort(scores.begin(), scores.end());
  for (std::size_t i = 1; i < scores.size(); ++i) {
    std::size_t lo_unknowns = 0, hi_unknowns = 0;
    for (const auto& det : dets) {
      if (!(*det.id_score > scores[i - 1])) ++lo_unknowns;
      if (!(*det.id_score > scores[i])) ++hi_unknowns;
    }
    CHECK(hi_unknowns >= lo_unknowns);
  }
}

TEST_CASE("histograms bin the partitions independently") {
  std::vector<Detection> dets;
  std::vector<PartitionLabel> labels;
  auto add = [&](PartitionKind kind, double id_score, double objectness) {
    Detection det = make_det(1, Box{10, 10, 4, 4}, {0.0}, objectness);
    det.id_score = id_score;
    dets.push_back(det);
    labels.push_back({kind, -1});
  };

  SECTION("two detections, one bin") {
    add(PartitionKind::kIdMatch, 2.0, 0.9);
    add(PartitionKind::kOodMatch, 1.0, 0.3);
    const auto set = histograms(dets, labels, 1);
    REQUIRE(set.id_score.id_match.size() == 1);
    CHECK(set.id_score.id_match[0] == 1);
    CHECK(set.id_score.ood_match[0] == 1);
    CHECK(set.id_score.background[0] == 0);
    CHECK(set.id_score.bin_edges.front() == 1.0);
    CHECK(set.id_score.bin_edges.back() == 2.0);
  }

  SECTION("empty partitions produce zero counts, not errors") {
    add(PartitionKind::kIdMatch, 2.0, 0.9);
    const auto set = histograms(dets, labels, 4);
    // All values identical: a single degenerate bin.
    REQUIRE(set.id_score.id_match.size() == 1);
    CHECK(set.id_score.id_match[0] == 1);
    CHECK(set.id_score.ood_match[0] == 0);
  }

  SECTION("ten detections, five bins, against the binning oracle") {
    std::vector<double> values{0.05, 0.15, 0.35, 0.45, 0.55,
                               0.65, 0.75, 0.85, 0.95, 0.25};
    std::vector<int> series{0, 1, 2, 0, 1, 2, 0, 1, 2, 0};
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto kind = series[i] == 0   ? PartitionKind::kIdMatch
                        : series[i] == 1 ? PartitionKind::kOodMatch
                                         : PartitionKind::kBackground;
      add(kind, values[i], values[i]);
    }
    const auto set = histograms(dets, labels, 5);
    const auto expected =
        oracles::bin_counts(values, series, 3, 5, 0.05, 0.95);
    REQUIRE(set.id_score.id_match.size() == 5);
    for (int b = 0; b < 5; ++b) {
      CHECK(set.id_score.id_match[static_cast<std::size_t>(b)] ==
            expected[0][static_cast<std::size_t>(b)]);
      CHECK(set.id_score.ood_match[static_cast<std::size_t>(b)] ==
            expected[1][static_cast<std::size_t>(b)]);
      CHECK(set.id_score.background[static_cast<std::size_t>(b)] ==
            expected[2][static_cast<std::size_t>(b)]);
    }
  }

  SECTION("no partitioned detections produce empty series") {
    add(PartitionKind::kIgnored, 1.0, 0.5);
    const auto set = histograms(dets, labels, 4);
    CHECK(set.id_score.bin_edges.empty());
    CHECK(set.id_score.id_match.empty());
  }
}

TEST_CASE("evaluate is deterministic and worker-count independent") {
  const auto bundle = small_synth(23);
  auto bundle2 = bundle;
  bundle2.cfg.workers = 2;
  auto bundle4 = bundle;
  bundle4.cfg.workers = 4;

  const auto r1 = evaluate(bundle);
  const auto r1_again = evaluate(bundle);
  const auto r2 = evaluate(bundle2);
  const auto r4 = evaluate(bundle4);

  CHECK(r1.aosp == r1_again.aosp);
  CHECK(r1.aosp == r2.aosp);
  CHECK(r1.aosp == r4.aosp);
  CHECK(r1.id_map_closed == r2.id_map_closed);
  CHECK(r1.ca_ar == r4.ca_ar);
  REQUIRE(r1.curve.size() == r2.curve.size());
  for (std::size_t i = 0; i < r1.curve.size(); ++i) {
    CHECK(r1.curve[i].threshold == r2.curve[i].threshold);
    CHECK(r1.curve[i].id_map == r4.curve[i].id_map);
  }
}

TEST_CASE("evaluate report invariants on synth bundles") {
  for (std::uint64_t seed : {2u, 4u}) {
    const auto bundle = small_synth(seed);
    const auto report = evaluate(bundle);
    CHECK(report.aosp >= 0.0);
    CHECK(report.aosp <= 1.0);
    CHECK(report.id_map_closed >= 0.0);
    CHECK(report.id_map_closed <= 1.0);
    CHECK(report.ca_ar >= 0.0);
    CHECK(report.ca_ar <= 1.0);
    for (const auto& axis :
         {report.auroc.id_vs_ood, report.auroc.id_vs_nonid,
          report.auroc.ood_vs_bg, report.auroc.fg_vs_bg}) {
      if (axis) {
        CHECK(*axis >= 0.0);
        CHECK(*axis <= 1.0);
      }
    }
    // The curve's first point relabels nothing: it equals the closed-set
    // value exactly.
    REQUIRE(!report.curve.empty());
    CHECK(report.curve.front().target_recall == 0.0);
    CHECK(report.curve.front().id_map == report.id_map_closed);
  }
}
