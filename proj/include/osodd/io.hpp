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

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "osodd/core.hpp"
#include "osodd/metrics.hpp"

namespace osodd {

namespace detail {

inline nlohmann::json parse_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError(path + ": cannot open file");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
}

inline double number_field(const nlohmann::json& j, const char* key,
                           const std::string& context) {
  if (!j.contains(key) || !j[key].is_number()) {
    throw InputError(context + ": missing or non-numeric '" + key + "'");
  }
  return j[key].get<double>();
}

inline std::int64_t int_field(const nlohmann::json& j, const char* key,
                              const std::string& context) {
  if (!j.contains(key) || !j[key].is_number_integer()) {
    throw InputError(context + ": missing or non-integer '" + key + "'");
  }
  return j[key].get<std::int64_t>();
}

}  // namespace detail

struct LoadedGroundTruth {
  std::vector<ImageInfo> images;
  std::vector<GroundTruthObject> gts;
};

/// Loads COCO-format ground truth: images[{id,width,height}],
/// annotations[{id,image_id,category_id,bbox}], categories[{id,name}].
/// Corner-format boxes are converted to center format. Degenerate boxes and
/// crowd annotations are rejected with the offending annotation id.
inline LoadedGroundTruth load_ground_truth(const std::string& path) {
  const auto root = detail::parse_json_file(path);
  for (const char* key : {"images", "annotations", "categories"}) {
    if (!root.contains(key) || !root[key].is_array()) {
      throw InputError(path + ": missing '" + std::string(key) + "' array");
    }
  }
  LoadedGroundTruth loaded;
  std::unordered_set<ImageId> image_ids;
  for (const auto& img : root["images"]) {
    ImageInfo info;
    info.id = detail::int_field(img, "id", path + ": image");
    info.width = static_cast<int>(
        detail::int_field(img, "width", path + ": image"));
    info.height = static_cast<int>(
        detail::int_field(img, "height", path + ": image"));
    if (!image_ids.insert(info.id).second) {
      throw InputError(path + ": duplicate image id " +
                       std::to_string(info.id));
    }
    loaded.images.push_back(info);
  }
  std::unordered_set<std::int64_t> category_ids;
  for (const auto& cat : root["categories"]) {
    category_ids.insert(detail::int_field(cat, "id", path + ": category"));
  }
  for (const auto& ann : root["annotations"]) {
    const std::int64_t ann_id =
        detail::int_field(ann, "id", path + ": annotation");
    const std::string context =
        path + ": annotation " + std::to_string(ann_id);
    if (ann.contains("iscrowd")) {
      const auto& crowd = ann["iscrowd"];
      const bool is_crowd = (crowd.is_number() && crowd.get<double>() != 0.0) ||
                            (crowd.is_boolean() && crowd.get<bool>());
      if (is_crowd) {
        throw InputError(context + ": crowd annotations are not supported");
      }
    }
    GroundTruthObject gt;
    gt.image_id = detail::int_field(ann, "image_id", context);
    if (image_ids.count(gt.image_id) == 0) {
      throw InputError(context + ": unknown image id " +
                       std::to_string(gt.image_id));
    }
    const std::int64_t category =
        detail::int_field(ann, "category_id", context);
    if (category <= 0 || category_ids.count(category) == 0) {
      throw InputError(context + ": category_id " + std::to_string(category) +
                       " not listed in categories");
    }
    gt.dataset_class = static_cast<int>(category);
    if (!ann.contains("bbox") || !ann["bbox"].is_array() ||
        ann["bbox"].size() != 4) {
      throw InputError(context + ": bbox must be [x, y, w, h]");
    }
    double b[4];
    for (int k = 0; k < 4; ++k) {
      if (!ann["bbox"][static_cast<std::size_t>(k)].is_number()) {
        throw InputError(context + ": bbox entries must be numeric");
      }
      b[k] = ann["bbox"][static_cast<std::size_t>(k)].get<double>();
    }
    gt.box = Box::from_corner(b[0], b[1], b[2], b[3]);
    validate_box(gt.box, context);
    loaded.gts.push_back(gt);
  }
  return loaded;
}

/// Builds one Detection from a parsed JSON record. Shared by the JSONL
/// loader and the decide subcommand so both validate identically.
inline Detection detection_from_json(const nlohmann::json& j,
                                     const std::string& context) {
  if (!j.is_object()) throw InputError(context + ": record must be an object");
  Detection det;
  det.image_id = detail::int_field(j, "image_id", context);
  if (!j.contains("bbox") || !j["bbox"].is_array() || j["bbox"].size() != 4) {
    throw InputError(context + ": bbox must be [x, y, w, h]");
  }
  double b[4];
  for (int k = 0; k < 4; ++k) {
    if (!j["bbox"][static_cast<std::size_t>(k)].is_number()) {
      throw InputError(context + ": bbox entries must be numeric");
    }
    b[k] = j["bbox"][static_cast<std::size_t>(k)].get<double>();
  }
  det.box = Box::from_corner(b[0], b[1], b[2], b[3]);
  validate_box(det.box, context);
  if (!j.contains("logits") || !j["logits"].is_array() || j["logits"].empty()) {
    throw InputError(context + ": logits must be a non-empty array");
  }
  for (const auto& l : j["logits"]) {
    if (!l.is_number()) {
      throw InputError(context + ": logits entries must be numeric");
    }
    const double v = l.get<double>();
    if (!std::isfinite(v)) {
      throw InputError(context + ": logits must be finite");
    }
    det.logits.push_back(v);
  }
  det.objectness = detail::number_field(j, "objectness", context);
  if (!(det.objectness >= 0.0 && det.objectness <= 1.0)) {
    throw InputError(context + ": objectness " +
                     std::to_string(det.objectness) + " outside [0, 1]");
  }
  if (j.contains("features")) {
    if (!j["features"].is_array() || j["features"].empty()) {
      throw InputError(context + ": features must be a non-empty array");
    }
    std::vector<double> feats;
    for (const auto& f : j["features"]) {
      if (!f.is_number()) {
        throw InputError(context + ": features entries must be numeric");
      }
      feats.push_back(f.get<double>());
    }
    det.features = std::move(feats);
  }
  return det;
}

/// Loads detections from JSON Lines. Fails fast: any malformed line aborts
/// the load with its line number.
inline std::vector<Detection> load_detections(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError(path + ": cannot open file");
  std::vector<Detection> dets;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string context = path + ": line " + std::to_string(line_no);
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      throw InputError(context + ": empty line");
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw InputError(context + ": " + e.what());
    }
    dets.push_back(detection_from_json(j, context));
  }
  return dets;
}

/// Loads a class split file: {"id_classes": [...], "alias_map": {...}}.
inline ClassSplit load_split(const std::string& path) {
  const auto root = detail::parse_json_file(path);
  if (!root.contains("id_classes") || !root["id_classes"].is_array()) {
    throw InputError(path + ": missing 'id_classes' array");
  }
  std::vector<int> id_classes;
  for (const auto& c : root["id_classes"]) {
    if (!c.is_number_integer()) {
      throw InputError(path + ": id_classes entries must be integers");
    }
    id_classes.push_back(c.get<int>());
  }
  std::map<int, int> alias_map;
  if (root.contains("alias_map")) {
    if (!root["alias_map"].is_object()) {
      throw InputError(path + ": alias_map must be an object");
    }
    for (const auto& [key, value] : root["alias_map"].items()) {
      int from = 0;
      try {
        std::size_t pos = 0;
        from = std::stoi(key, &pos);
        if (pos != key.size()) throw std::invalid_argument(key);
      } catch (const std::exception&) {
        throw InputError(path + ": alias_map key '" + key +
                         "' is not an integer");
      }
      if (!value.is_number_integer()) {
        throw InputError(path + ": alias_map values must be integers");
      }
      alias_map[from] = value.get<int>();
    }
  }
  try {
    return ClassSplit(std::move(id_classes), std::move(alias_map));
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
}

/// Loads and assembles a full bundle, validating cross-file consistency.
inline DatasetBundle load_bundle(const std::string& gt_path,
                                 const std::string& dets_path,
                                 const std::string& split_path,
                                 EvalConfig cfg) {
  DatasetBundle bundle;
  auto loaded = load_ground_truth(gt_path);
  bundle.images = std::move(loaded.images);
  bundle.gts = std::move(loaded.gts);
  bundle.dets = load_detections(dets_path);
  bundle.split = load_split(split_path);
  bundle.cfg = std::move(cfg);
  validate_bundle(bundle);
  return bundle;
}

namespace detail {

// Report numbers are emitted with 17 significant digits so every value
// round-trips; infinities become the strings "inf"/"-inf".
inline std::string json_number(double v) {
  if (std::isinf(v)) return v > 0 ? "\"inf\"" : "\"-inf\"";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%#.17g", v);
  std::string s(buf);
  if (!s.empty() && s.back() == '.') s.push_back('0');
  return s;
}

inline void append_number_array(std::string& out,
                                const std::vector<double>& values) {
  out += '[';
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ", ";
    out += json_number(values[i]);
  }
  out += ']';
}

inline void append_count_array(std::string& out,
                               const std::vector<std::int64_t>& values) {
  out += '[';
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ", ";
    out += std::to_string(values[i]);
  }
  out += ']';
}

inline void append_config(std::string& out, const EvalConfig& cfg) {
  out += "{\"ood_algorithm\": \"";
  out += to_string(cfg.ood_algorithm);
  out += "\", \"temperature\": ";
  out += json_number(cfg.temperature);
  out += ", \"id_thresh\": ";
  out += json_number(cfg.id_thresh);
  out += ", \"k_per_image\": " + std::to_string(cfg.k_per_image);
  out += ", \"iou_match\": " + json_number(cfg.iou_match);
  out += ", \"iou_bg\": " + json_number(cfg.iou_bg);
  out += ", \"ap_iou\": " + json_number(cfg.ap_iou);
  out += ", \"ar_iou_thresholds\": ";
  append_number_array(out, cfg.ar_iou_thresholds);
  out += ", \"recall_grid\": ";
  append_number_array(out, cfg.recall_grid);
  out += ", \"histogram_bins\": " + std::to_string(cfg.histogram_bins);
  out += '}';
}

inline void append_curve(std::string& out,
                         const std::vector<AospCurvePoint>& curve) {
  out += '[';
  for (std::size_t i = 0; i < curve.size(); ++i) {
    if (i > 0) out += ", ";
    const auto& p = curve[i];
    out += "{\"target_recall\": " + json_number(p.target_recall);
    out += ", \"threshold\": " + json_number(p.threshold);
    out += ", \"achieved_ood_recall\": " + json_number(p.achieved_ood_recall);
    out += ", \"id_map\": " + json_number(p.id_map);
    out += '}';
  }
  out += ']';
}

inline void append_histogram(std::string& out, const HistogramSeries& series) {
  out += "{\"bin_edges\": ";
  append_number_array(out, series.bin_edges);
  out += ", \"id_match\": ";
  append_count_array(out, series.id_match);
  out += ", \"ood_match\": ";
  append_count_array(out, series.ood_match);
  out += ", \"background\": ";
  append_count_array(out, series.background);
  out += '}';
}

inline void append_optional_metric(std::string& out, const char* name,
                                   const std::optional<double>& value) {
  out += "\"";
  out += name;
  out += "\": ";
  out += value ? json_number(*value) : "null";
}

}  // namespace detail

/// Serializes a report as one deterministic JSON document: identical
/// reports produce identical bytes.
inline std::string report_to_json(const EvalReport& report) {
  std::string out = "{\n  \"config\": ";
  detail::append_config(out, report.config);
  out += ",\n  \"metrics\": {";
  out += "\"aosp\": " + detail::json_number(report.aosp);
  out += ", \"id_map_closed\": " + detail::json_number(report.id_map_closed);
  out += ", \"ca_ar\": " + detail::json_number(report.ca_ar);
  out += ", ";
  detail::append_optional_metric(out, "auroc_id_ood", report.auroc.id_vs_ood);
  out += ", ";
  detail::append_optional_metric(out, "auroc_id_nonid",
                                 report.auroc.id_vs_nonid);
  out += ", ";
  detail::append_optional_metric(out, "auroc_ood_bg", report.auroc.ood_vs_bg);
  out += ", ";
  detail::append_optional_metric(out, "auroc_fg_bg", report.auroc.fg_vs_bg);
  out += "},\n  \"aosp_curve\": ";
  detail::append_curve(out, report.curve);
  out += ",\n  \"histograms\": {\"id_score\": ";
  detail::append_histogram(out, report.histograms.id_score);
  out += ", \"objectness\": ";
  detail::append_histogram(out, report.histograms.objectness);
  out += "}\n}\n";
  return out;
}

/// The aosp subcommand's output: config, the scalar, and the curve.
inline std::string aosp_to_json(const AospResult& result,
                                const EvalConfig& cfg) {
  std::string out = "{\n  \"config\": ";
  detail::append_config(out, cfg);
  out += ",\n  \"aosp\": " + detail::json_number(result.aosp);
  out += ",\n  \"aosp_curve\": ";
  detail::append_curve(out, result.curve);
  out += "\n}\n";
  return out;
}

/// COCO-format ground-truth document for a generated bundle. Categories
/// cover the full taxonomy 1..num_categories.
inline std::string ground_truth_to_json(
    const std::vector<ImageInfo>& images,
    const std::vector<GroundTruthObject>& gts, int num_categories) {
  nlohmann::ordered_json root;
  root["images"] = nlohmann::json::array();
  for (const auto& img : images) {
    root["images"].push_back(
        {{"id", img.id}, {"width", img.width}, {"height", img.height}});
  }
  root["annotations"] = nlohmann::json::array();
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const auto corner = gts[i].box.to_corner();
    root["annotations"].push_back(
        {{"id", static_cast<std::int64_t>(i) + 1},
         {"image_id", gts[i].image_id},
         {"category_id", gts[i].dataset_class},
         {"bbox", corner},
         {"iscrowd", 0}});
  }
  root["categories"] = nlohmann::json::array();
  for (int c = 1; c <= num_categories; ++c) {
    root["categories"].push_back(
        {{"id", c}, {"name", "class_" + std::to_string(c)}});
  }
  return root.dump(2) + "\n";
}

inline std::string detections_to_jsonl(const std::vector<Detection>& dets) {
  std::string out;
  for (const auto& det : dets) {
    nlohmann::ordered_json j;
    j["image_id"] = det.image_id;
    j["bbox"] = det.box.to_corner();
    j["logits"] = det.logits;
    j["objectness"] = det.objectness;
    if (det.features) j["features"] = *det.features;
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline std::string split_to_json(const ClassSplit& split) {
  nlohmann::ordered_json root;
  root["id_classes"] = split.id_classes();
  return root.dump(2) + "\n";
}

inline void write_text_file(const std::string& path,
                            const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError(path + ": cannot open for writing");
  out << content;
  if (!out) throw InputError(path + ": write failed");
}

inline void write_report(const EvalReport& report, const std::string& path) {
  write_text_file(path, report_to_json(report));
}

}  // namespace osodd
