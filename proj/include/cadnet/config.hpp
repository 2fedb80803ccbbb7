// Copyright 2026 The cadnet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Flat "key = value" configuration files. Keys carry dotted section
// prefixes (train.lr, model.d_fpn, ...); '#' starts a comment.

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cadnet/detector.hpp"
#include "cadnet/error.hpp"
#include "cadnet/ingest.hpp"
#include "cadnet/netcore.hpp"

namespace cadnet {

class KeyValues {
 public:
  static KeyValues parse(std::string_view text) {
    KeyValues kv;
    detail::for_each_line(text, [&](std::string_view raw, int line_no) {
      std::string_view line = raw;
      if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) return;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", line_no);
      const auto key = detail::trim(line.substr(0, eq));
      const auto value = detail::trim(line.substr(eq + 1));
      if (key.empty()) throw ParseError("empty key", line_no);
      kv.values_[std::string(key)] = std::string(value);
    });
    return kv;
  }

  static KeyValues load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open config " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    try {
      return parse(ss.str());
    } catch (const ParseError& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  const std::map<std::string, std::string>& entries() const { return values_; }

  // Entries of `other` that are absent here.
  void merge_missing(const KeyValues& other) {
    for (const auto& [k, v] : other.values_) values_.emplace(k, v);
  }

  std::optional<std::string> raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    used_.insert(key);
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& def) const {
    return raw(key).value_or(def);
  }

  double get_double(const std::string& key, double def) const {
    auto v = raw(key);
    if (!v) return def;
    double out = 0;
    if (!detail::parse_double(*v, out)) throw ConfigError(key + ": not a number: '" + *v + "'");
    return out;
  }

  long get_int(const std::string& key, long def) const {
    auto v = raw(key);
    if (!v) return def;
    long out = 0;
    if (!detail::parse_int(*v, out)) throw ConfigError(key + ": not an integer: '" + *v + "'");
    return out;
  }

  bool get_bool(const std::string& key, bool def) const {
    auto v = raw(key);
    if (!v) return def;
    if (*v == "on" || *v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "off" || *v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError(key + ": expected on/off, got '" + *v + "'");
  }

  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& def) const {
    auto v = raw(key);
    if (!v) return def;
    std::vector<double> out;
    std::string s = *v;
    for (char& c : s) {
      if (c == ',') c = ' ';
    }
    for (auto tok : detail::split_ws(s)) {
      double d = 0;
      if (!detail::parse_double(tok, d)) throw ConfigError(key + ": bad list element '" + std::string(tok) + "'");
      out.push_back(d);
    }
    return out;
  }

  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) {
      if (!used_.count(k)) out.push_back(k);
    }
    return out;
  }

  std::string serialize() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

namespace detail {

inline std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename Range>
std::string join(const Range& r) {
  std::string out;
  for (const auto& v : r) {
    if (!out.empty()) out += ", ";
    out += num(static_cast<double>(v));
  }
  return out;
}

inline std::string onoff(bool b) { return b ? "on" : "off"; }

}  // namespace detail

inline ModelConfig model_config_from(const KeyValues& kv, ModelConfig cfg = {}) {
  cfg.stem_width = static_cast<int>(kv.get_int("model.stem_width", cfg.stem_width));
  const auto widths = kv.get_doubles("model.backbone_widths", {cfg.backbone_widths.begin(), cfg.backbone_widths.end()});
  if (widths.size() != kNumLevels) throw ConfigError("model.backbone_widths needs 4 entries");
  for (int i = 0; i < kNumLevels; ++i) cfg.backbone_widths[i] = static_cast<int>(widths[i]);
  cfg.d_fpn = static_cast<int>(kv.get_int("model.d_fpn", cfg.d_fpn));
  cfg.d_g = static_cast<int>(kv.get_int("model.d_g", cfg.d_g));
  cfg.head_hidden = static_cast<int>(kv.get_int("model.head_hidden", cfg.head_hidden));
  cfg.num_classes = static_cast<int>(kv.get_int("model.num_classes", cfg.num_classes));
  cfg.anchors.sizes = kv.get_doubles("model.anchor_sizes", cfg.anchors.sizes);
  cfg.anchors.ratios = kv.get_doubles("model.anchor_ratios", cfg.anchors.ratios);
  if (cfg.anchors.sizes.size() != kNumLevels) throw ConfigError("model.anchor_sizes needs 4 entries");
  if (cfg.anchors.ratios.empty()) throw ConfigError("model.anchor_ratios is empty");
  cfg.roi_canonical_size = kv.get_double("model.roi_canonical_size", cfg.roi_canonical_size);
  cfg.roi_canonical_level = static_cast<int>(kv.get_int("model.roi_canonical_level", cfg.roi_canonical_level));
  cfg.roi.output_size = static_cast<int>(kv.get_int("model.roi_output_size", cfg.roi.output_size));
  cfg.roi.sampling_ratio = static_cast<int>(kv.get_int("model.roi_sampling_ratio", cfg.roi.sampling_ratio));
  cfg.gcnet = kv.get_bool("model.gcnet", cfg.gcnet);
  cfg.plcnet = kv.get_bool("model.plcnet", cfg.plcnet);
  cfg.attention = kv.get_bool("model.attention", cfg.attention);
  cfg.rpn_on_attention = kv.get_bool("model.rpn_on_attention", cfg.rpn_on_attention);
  if (cfg.stem_width <= 0 || cfg.d_fpn <= 0 || cfg.d_g <= 0 || cfg.head_hidden <= 0 || cfg.num_classes <= 0 ||
      cfg.roi.output_size <= 0 || cfg.roi.sampling_ratio <= 0) {
    throw ConfigError("model widths and sizes must be positive");
  }
  return cfg;
}

inline KeyValues model_config_to_kv(const ModelConfig& cfg) {
  KeyValues kv;
  kv.set("model.stem_width", std::to_string(cfg.stem_width));
  kv.set("model.backbone_widths", detail::join(cfg.backbone_widths));
  kv.set("model.d_fpn", std::to_string(cfg.d_fpn));
  kv.set("model.d_g", std::to_string(cfg.d_g));
  kv.set("model.head_hidden", std::to_string(cfg.head_hidden));
  kv.set("model.num_classes", std::to_string(cfg.num_classes));
  kv.set("model.anchor_sizes", detail::join(cfg.anchors.sizes));
  kv.set("model.anchor_ratios", detail::join(cfg.anchors.ratios));
  kv.set("model.roi_canonical_size", detail::num(cfg.roi_canonical_size));
  kv.set("model.roi_canonical_level", std::to_string(cfg.roi_canonical_level));
  kv.set("model.roi_output_size", std::to_string(cfg.roi.output_size));
  kv.set("model.roi_sampling_ratio", std::to_string(cfg.roi.sampling_ratio));
  kv.set("model.gcnet", detail::onoff(cfg.gcnet));
  kv.set("model.plcnet", detail::onoff(cfg.plcnet));
  kv.set("model.attention", detail::onoff(cfg.attention));
  kv.set("model.rpn_on_attention", detail::onoff(cfg.rpn_on_attention));
  return kv;
}

inline DetectorParams detector_params_from(const KeyValues& kv, DetectorParams p = {}) {
  p.rpn_thresholds.positive = kv.get_double("detector.rpn_positive_iou", p.rpn_thresholds.positive);
  p.rpn_thresholds.negative = kv.get_double("detector.rpn_negative_iou", p.rpn_thresholds.negative);
  p.roi_thresholds.positive = kv.get_double("detector.roi_positive_iou", p.roi_thresholds.positive);
  p.roi_thresholds.negative = kv.get_double("detector.roi_negative_iou", p.roi_thresholds.negative);
  p.rpn_batch = static_cast<int>(kv.get_int("detector.rpn_batch", p.rpn_batch));
  p.rpn_positive_fraction = kv.get_double("detector.rpn_positive_fraction", p.rpn_positive_fraction);
  p.roi_batch = static_cast<int>(kv.get_int("detector.roi_batch", p.roi_batch));
  p.roi_positive_fraction = kv.get_double("detector.roi_positive_fraction", p.roi_positive_fraction);
  p.rpn_pre_nms_train = static_cast<int>(kv.get_int("detector.rpn_pre_nms_train", p.rpn_pre_nms_train));
  p.rpn_post_nms_train = static_cast<int>(kv.get_int("detector.rpn_post_nms_train", p.rpn_post_nms_train));
  p.rpn_pre_nms_test = static_cast<int>(kv.get_int("detector.rpn_pre_nms_test", p.rpn_pre_nms_test));
  p.rpn_post_nms_test = static_cast<int>(kv.get_int("detector.rpn_post_nms_test", p.rpn_post_nms_test));
  p.rpn_nms = kv.get_double("detector.rpn_nms", p.rpn_nms);
  p.min_proposal_size = kv.get_double("detector.min_proposal_size", p.min_proposal_size);
  p.lambda_hbb = kv.get_double("detector.lambda_hbb", p.lambda_hbb);
  p.lambda_obb = kv.get_double("detector.lambda_obb", p.lambda_obb);
  p.smooth_l1_beta = kv.get_double("detector.smooth_l1_beta", p.smooth_l1_beta);
  p.score_threshold = kv.get_double("detector.score_threshold", p.score_threshold);
  p.nms_threshold = kv.get_double("detector.nms_threshold", p.nms_threshold);
  p.max_detections = static_cast<int>(kv.get_int("detector.max_detections", p.max_detections));
  return p;
}

enum class DatasetKind { kDota, kNwpu, kSynthetic };

struct SyntheticParams {
  int train_images = 200;
  int test_images = 50;
  int image_size = 128;
  int min_objects = 2;
  int max_objects = 6;
  std::uint64_t seed = 7;
};

struct TileParams {
  int train_size = 1600;
  int train_overlap = 800;
  int infer_size = 4096;
  int infer_overlap = 1024;
};

struct OptimizerParams {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int iterations = 1000;
  int batch_size = 1;
  double clip_norm = 0.0;  // 0 disables clipping
  int checkpoint_interval = 0;  // 0 keeps only the final checkpoint
};

struct ExperimentConfig {
  std::filesystem::path source;  // the config file, when loaded from disk
  DatasetKind dataset = DatasetKind::kSynthetic;
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  double nwpu_train_fraction = 0.6;
  std::uint64_t nwpu_split_seed = 0;
  SyntheticParams synthetic;
  TileParams tile;
  ModelConfig model;
  DetectorParams detector;
  OptimizerParams optim;
  std::uint64_t seed = 1;
  double eval_iou = 0.5;
  std::filesystem::path output_dir = "out";

  ClassVocabulary vocabulary() const {
    switch (dataset) {
      case DatasetKind::kDota: return ClassVocabulary::dota();
      case DatasetKind::kNwpu: return ClassVocabulary::nwpu();
      case DatasetKind::kSynthetic: break;
    }
    return ClassVocabulary({"plane", "ship", "vehicle"});
  }
};

inline std::string dataset_kind_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::kDota: return "dota";
    case DatasetKind::kNwpu: return "nwpu";
    case DatasetKind::kSynthetic: break;
  }
  return "synthetic";
}

// Builds an experiment from parsed keys. Relative paths resolve against
// `base`. Unknown keys are rejected so that typos fail loudly.
inline ExperimentConfig experiment_config_from(const KeyValues& kv_in, const std::filesystem::path& base) {
  namespace fs = std::filesystem;
  KeyValues kv = kv_in;
  if (auto ref = kv.raw("model.file")) {
    const fs::path p = fs::path(*ref).is_absolute() ? fs::path(*ref) : base / *ref;
    kv.merge_missing(KeyValues::load(p));
  }
  auto path_of = [&](const std::string& key, const fs::path& def) -> fs::path {
    auto v = kv.raw(key);
    if (!v) return def;
    const fs::path p(*v);
    return p.is_absolute() ? p : base / p;
  };

  ExperimentConfig c;
  const std::string kind = kv.get_string("dataset.kind", "synthetic");
  if (kind == "dota") {
    c.dataset = DatasetKind::kDota;
  } else if (kind == "nwpu") {
    c.dataset = DatasetKind::kNwpu;
  } else if (kind == "synthetic") {
    c.dataset = DatasetKind::kSynthetic;
  } else {
    throw ConfigError("dataset.kind must be dota, nwpu or synthetic");
  }
  c.output_dir = path_of("output.dir", base / "out");
  const fs::path root = path_of("dataset.root", c.dataset == DatasetKind::kSynthetic ? c.output_dir / "data" : base);
  if (c.dataset == DatasetKind::kNwpu) {
    c.train_images = c.test_images = path_of("dataset.images", root / "positive image set");
    c.train_labels = c.test_labels = path_of("dataset.labels", root / "ground truth");
  } else {
    c.train_images = path_of("dataset.train_images", root / "train" / "images");
    c.train_labels = path_of("dataset.train_labels", root / "train" / "labelTxt");
    c.test_images = path_of("dataset.test_images", root / "test" / "images");
    c.test_labels = path_of("dataset.test_labels", root / "test" / "labelTxt");
  }
  c.nwpu_train_fraction = kv.get_double("dataset.train_fraction", c.nwpu_train_fraction);
  c.nwpu_split_seed = static_cast<std::uint64_t>(kv.get_int("dataset.split_seed", 0));

  auto& s = c.synthetic;
  s.train_images = static_cast<int>(kv.get_int("synthetic.train_images", s.train_images));
  s.test_images = static_cast<int>(kv.get_int("synthetic.test_images", s.test_images));
  s.image_size = static_cast<int>(kv.get_int("synthetic.image_size", s.image_size));
  s.min_objects = static_cast<int>(kv.get_int("synthetic.min_objects", s.min_objects));
  s.max_objects = static_cast<int>(kv.get_int("synthetic.max_objects", s.max_objects));
  s.seed = static_cast<std::uint64_t>(kv.get_int("synthetic.seed", static_cast<long>(s.seed)));
  if (s.image_size < 32 || s.min_objects < 0 || s.max_objects < s.min_objects) {
    throw ConfigError("synthetic: bad image size or object counts");
  }

  auto& t = c.tile;
  t.train_size = static_cast<int>(kv.get_int("tile.train_size", t.train_size));
  t.train_overlap = static_cast<int>(kv.get_int("tile.train_overlap", t.train_overlap));
  t.infer_size = static_cast<int>(kv.get_int("tile.infer_size", t.infer_size));
  t.infer_overlap = static_cast<int>(kv.get_int("tile.infer_overlap", t.infer_overlap));
  for (int sz : {t.train_size, t.infer_size}) {
    if (sz <= 0 || sz % 32 != 0) throw ConfigError("tile sizes must be positive multiples of 32");
  }
  if (t.train_overlap < 0 || t.train_overlap >= t.train_size || t.infer_overlap < 0 ||
      t.infer_overlap >= t.infer_size) {
    throw ConfigError("tile overlap must lie in [0, tile size)");
  }

  c.model = model_config_from(kv);
  c.model.gcnet = kv.get_bool("ablation.gcnet", c.model.gcnet);
  c.model.plcnet = kv.get_bool("ablation.plcnet", c.model.plcnet);
  c.model.attention = kv.get_bool("ablation.attention", c.model.attention);
  c.detector = detector_params_from(kv);

  auto& o = c.optim;
  o.learning_rate = kv.get_double("train.learning_rate", o.learning_rate);
  o.momentum = kv.get_double("train.momentum", o.momentum);
  o.weight_decay = kv.get_double("train.weight_decay", o.weight_decay);
  o.iterations = static_cast<int>(kv.get_int("train.iterations", o.iterations));
  o.batch_size = static_cast<int>(kv.get_int("train.batch_size", o.batch_size));
  o.clip_norm = kv.get_double("train.clip_norm", o.clip_norm);
  o.checkpoint_interval = static_cast<int>(kv.get_int("train.checkpoint_interval", o.checkpoint_interval));
  if (o.learning_rate <= 0 || o.iterations < 0 || o.batch_size < 1 || o.momentum < 0 || o.momentum >= 1) {
    throw ConfigError("train: bad optimizer settings");
  }
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long>(c.seed)));
  c.eval_iou = kv.get_double("eval.iou_threshold", c.eval_iou);

  const int want_classes = static_cast<int>(c.vocabulary().size());
  if (kv.has("model.num_classes") && c.model.num_classes != want_classes) {
    throw ConfigError("model.num_classes does not match the dataset vocabulary");
  }
  c.model.num_classes = want_classes;

  if (const auto unused = kv.unused_keys(); !unused.empty()) {
    throw ConfigError("unknown config key '" + unused.front() + "'");
  }
  if (c.dataset != DatasetKind::kSynthetic) {
    for (const auto& p : {c.train_images, c.train_labels, c.test_images, c.test_labels}) {
      if (!fs::exists(p)) throw ConfigError("dataset path not found: " + p.string());
    }
  }
  return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  auto c = experiment_config_from(KeyValues::load(path), path.parent_path().empty() ? "." : path.parent_path());
  c.source = path;
  return c;
}

}  // namespace cadnet
