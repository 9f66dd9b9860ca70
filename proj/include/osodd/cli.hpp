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

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "osodd/io.hpp"
#include "osodd/synth.hpp"

namespace osodd {

namespace detail {

struct CliPaths {
  std::string gt;
  std::string dets;
  std::string split;
  std::string out;
};

inline void add_eval_options(CLI::App* cmd, CliPaths* paths, EvalConfig* cfg,
                             std::string* algo_name, bool with_gt) {
  if (with_gt) {
    cmd->add_option("--gt", paths->gt, "COCO-format ground-truth JSON")
        ->required();
  }
  cmd->add_option("--dets", paths->dets, "detections JSON Lines")->required();
  cmd->add_option("--split", paths->split, "class split JSON")->required();
  cmd->add_option("--ood-algo", *algo_name, "post-hoc ID-score algorithm")
      ->check(CLI::IsMember({"energy", "msp", "max_logit", "mahalanobis"}))
      ->default_val("energy");
  cmd->add_option("--id-thresh", cfg->id_thresh,
                  "decision threshold on the ID score (accepts inf/-inf)");
  cmd->add_option("--temperature", cfg->temperature,
                  "energy temperature, > 0");
  cmd->add_option("--k", cfg->k_per_image, "detections kept per image");
  cmd->add_option("--out", paths->out, "output path (default: stdout)");
}

inline void emit(const std::string& content, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << content;
  } else {
    write_text_file(out_path, content);
  }
}

inline SynthConfig synth_config_from_json(const std::string& path) {
  const auto j = parse_json_file(path);
  SynthConfig cfg;
  auto get_int = [&](const char* key, int fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number_integer()) {
      throw InputError(path + ": '" + key + "' must be an integer");
    }
    return j[key].get<int>();
  };
  auto get_double = [&](const char* key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j[key].is_number()) {
      throw InputError(path + ": '" + key + "' must be numeric");
    }
    return j[key].get<double>();
  };
  if (j.contains("seed")) {
    if (!j["seed"].is_number_integer()) {
      throw InputError(path + ": 'seed' must be an integer");
    }
    cfg.seed = j["seed"].get<std::uint64_t>();
  }
  cfg.num_images = get_int("num_images", cfg.num_images);
  cfg.id_classes = get_int("id_classes", cfg.id_classes);
  cfg.ood_classes = get_int("ood_classes", cfg.ood_classes);
  if (j.contains("objects_per_image")) {
    const auto& range = j["objects_per_image"];
    if (!range.is_array() || range.size() != 2 ||
        !range[0].is_number_integer() || !range[1].is_number_integer()) {
      throw InputError(path +
                       ": 'objects_per_image' must be [min, max] integers");
    }
    cfg.objects_min = range[0].get<int>();
    cfg.objects_max = range[1].get<int>();
  }
  cfg.id_score_separation =
      get_double("id_score_separation", cfg.id_score_separation);
  cfg.objectness_separation =
      get_double("objectness_separation", cfg.objectness_separation);
  cfg.localization_noise =
      get_double("localization_noise", cfg.localization_noise);
  cfg.fp_rate = get_double("fp_rate", cfg.fp_rate);
  cfg.miss_rate = get_double("miss_rate", cfg.miss_rate);
  cfg.validate();
  return cfg;
}

inline std::string run_decide(const CliPaths& paths, EvalConfig cfg) {
  cfg.validate();
  const ClassSplit split = load_split(paths.split);

  std::ifstream in(paths.dets);
  if (!in) throw InputError(paths.dets + ": cannot open file");
  std::vector<nlohmann::json> records;
  std::vector<Detection> dets;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string context =
        paths.dets + ": line " + std::to_string(line_no);
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      throw InputError(context + ": empty line");
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw InputError(context + ": " + e.what());
    }
    Detection det = detection_from_json(j, context);
    if (det.logits.size() != split.num_classes()) {
      throw InputError(context + ": " + std::to_string(det.logits.size()) +
                       " logits, split has " +
                       std::to_string(split.num_classes()) + " classes");
    }
    records.push_back(std::move(j));
    dets.push_back(std::move(det));
  }

  std::optional<IdScorer> scorer;
  if (cfg.ood_algorithm == OodAlgorithm::kMahalanobis) {
    scorer.emplace(fit_mahalanobis_from_detections(dets, split));
  } else {
    scorer.emplace(cfg.ood_algorithm, cfg.temperature);
  }
  std::string out;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const Detection decided = decide(dets[i], split, cfg, *scorer);
    auto& j = records[i];
    j["decided_class"] = *decided.decided_class;
    j["confidence"] = *decided.confidence;
    j["id_score"] = *decided.id_score;
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline std::string run_partition(const CliPaths& paths, EvalConfig cfg) {
  DatasetBundle bundle =
      load_bundle(paths.gt, paths.dets, paths.split, std::move(cfg));
  const auto groups = group_by_image(bundle.dets, bundle.gts);
  std::vector<double> conf(bundle.dets.size());
  for (std::size_t i = 0; i < bundle.dets.size(); ++i) {
    conf[i] = fused_confidence(bundle.dets[i]);
  }
  std::vector<PartitionLabel> labels(bundle.dets.size());
  parallel_for(groups.ids.size(), bundle.cfg.workers, [&](std::size_t img) {
    const auto result = match_partition_indexed(
        bundle.dets, groups.dets_of[img], bundle.gts, groups.gts_of[img],
        bundle.split, bundle.cfg, conf);
    for (std::size_t i = 0; i < groups.dets_of[img].size(); ++i) {
      PartitionLabel label = result.labels[i];
      if (label.gt_index >= 0) {
        label.gt_index =
            groups.gts_of[img][static_cast<std::size_t>(label.gt_index)];
      }
      labels[static_cast<std::size_t>(groups.dets_of[img][i])] = label;
    }
  });
  std::string out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    nlohmann::ordered_json j;
    j["index"] = static_cast<std::int64_t>(i);
    j["image_id"] = bundle.dets[i].image_id;
    j["label"] = to_string(labels[i].kind);
    if (labels[i].gt_index >= 0) {
      j["gt_index"] = labels[i].gt_index;
    } else {
      j["gt_index"] = nullptr;
    }
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace detail

/// Command-line entry point. Exit codes: 0 success, 1 input or validation
/// error, 2 undefined metric for the given data.
inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"open-set object detection evaluation toolkit"};
  app.require_subcommand(1);

  detail::CliPaths paths;
  EvalConfig cfg;
  std::string algo_name = "energy";

  auto* cmd_evaluate =
      app.add_subcommand("evaluate", "full evaluation report");
  detail::add_eval_options(cmd_evaluate, &paths, &cfg, &algo_name, true);
  cmd_evaluate->add_option("--workers", cfg.workers,
                           "parallel workers (results are identical)");

  auto* cmd_aosp = app.add_subcommand("aosp", "AOSP value and curve only");
  detail::add_eval_options(cmd_aosp, &paths, &cfg, &algo_name, true);
  cmd_aosp->add_option("--workers", cfg.workers,
                       "parallel workers (results are identical)");

  auto* cmd_decide = app.add_subcommand(
      "decide", "apply the open-set decision rule to detections");
  detail::add_eval_options(cmd_decide, &paths, &cfg, &algo_name, false);

  auto* cmd_partition = app.add_subcommand(
      "partition", "per-detection ID/OOD/BG/ignored labels");
  cmd_partition->add_option("--gt", paths.gt, "COCO-format ground-truth JSON")
      ->required();
  cmd_partition->add_option("--dets", paths.dets, "detections JSON Lines")
      ->required();
  cmd_partition->add_option("--split", paths.split, "class split JSON")
      ->required();
  cmd_partition->add_option("--workers", cfg.workers, "parallel workers");
  cmd_partition->add_option("--out", paths.out,
                            "output path (default: stdout)");

  auto* cmd_synth =
      app.add_subcommand("synth", "generate a deterministic synthetic bundle");
  std::string synth_config_path, out_gt, out_dets, out_split;
  cmd_synth->add_option("--config", synth_config_path, "synth config JSON")
      ->required();
  cmd_synth->add_option("--out-gt", out_gt, "ground-truth output path")
      ->required();
  cmd_synth->add_option("--out-dets", out_dets, "detections output path")
      ->required();
  cmd_synth->add_option("--out-split", out_split, "class split output path")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    cfg.ood_algorithm = parse_ood_algorithm(algo_name);
    if (cmd_evaluate->parsed()) {
      const auto bundle = load_bundle(paths.gt, paths.dets, paths.split, cfg);
      detail::emit(report_to_json(evaluate(bundle)), paths.out);
    } else if (cmd_aosp->parsed()) {
      const auto bundle = load_bundle(paths.gt, paths.dets, paths.split, cfg);
      const auto scored = score_and_decide(bundle);
      const auto result = aosp(scored, bundle.gts, bundle.split, bundle.cfg);
      detail::emit(aosp_to_json(result, bundle.cfg), paths.out);
    } else if (cmd_decide->parsed()) {
      detail::emit(detail::run_decide(paths, cfg), paths.out);
    } else if (cmd_partition->parsed()) {
      detail::emit(detail::run_partition(paths, cfg), paths.out);
    } else if (cmd_synth->parsed()) {
      const auto synth_cfg = detail::synth_config_from_json(synth_config_path);
      const auto bundle = generate(synth_cfg);
      write_text_file(
          out_gt, ground_truth_to_json(bundle.images, bundle.gts,
                                       synth_cfg.id_classes +
                                           synth_cfg.ood_classes));
      write_text_file(out_dets, detections_to_jsonl(bundle.dets));
      write_text_file(out_split, split_to_json(bundle.split));
    }
  } catch (const UndefinedMetricError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace osodd
