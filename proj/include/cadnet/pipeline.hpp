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

// Operator commands: tile, train, infer, eval, ablate, plot. Every
// artifact goes under the configured output directory.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cadnet/checkpoint.hpp"
#include "cadnet/config.hpp"
#include "cadnet/detector.hpp"
#include "cadnet/evaluation.hpp"
#include "cadnet/image_io.hpp"
#include "cadnet/ingest.hpp"
#include "cadnet/synthetic.hpp"
#include "cadnet/tiling.hpp"

namespace cadnet {

namespace fs = std::filesystem;

// Progress sink; silent unless the caller installs one.
using Logger = std::function<void(const std::string&)>;

inline void log_to(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

inline std::string read_text(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw Error("cannot read " + p.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write " + p.string());
  os << text;
}

// ---------------------------------------------------------------------------
// Datasets

// Writes the synthetic corpus unless a complete copy with the same
// generator settings already exists.
inline void ensure_synthetic_dataset(const ExperimentConfig& cfg, const Logger& log = {}) {
  if (cfg.dataset != DatasetKind::kSynthetic) return;
  const auto& s = cfg.synthetic;
  const std::string stamp = "generator=" + std::to_string(kSyntheticGeneratorVersion) + " train=" + std::to_string(s.train_images) + " test=" + std::to_string(s.test_images) +
                            " size=" + std::to_string(s.image_size) + " objects=" + std::to_string(s.min_objects) +
                            ".." + std::to_string(s.max_objects) + " seed=" + std::to_string(s.seed) + "\n";
  const fs::path marker = cfg.train_images.parent_path().parent_path() / "corpus.stamp";
  if (fs::exists(marker) && read_text(marker) == stamp) return;
  log_to(log, "generating synthetic corpus");
  const auto vocab = cfg.vocabulary();
  auto emit = [&](const std::string& split, int count, const fs::path& images, const fs::path& labels) {
    fs::remove_all(images);
    fs::remove_all(labels);
    fs::create_directories(images);
    fs::create_directories(labels);
    for (int i = 0; i < count; ++i) {
      const auto sample = generate_synthetic(s, split, i);
      char stem[32];
      std::snprintf(stem, sizeof stem, "%s_%04d", split.c_str(), i);
      write_image(images / (std::string(stem) + ".png"), sample.image);
      write_text(labels / (std::string(stem) + ".txt"), serialize_dota_annotation(sample.objects, vocab));
    }
  };
  emit("train", s.train_images, cfg.train_images, cfg.train_labels);
  emit("test", s.test_images, cfg.test_images, cfg.test_labels);
  write_text(marker, stamp);
}

inline std::vector<AnnotatedObject> load_annotations(const ExperimentConfig& cfg, const fs::path& path) {
  const auto vocab = cfg.vocabulary();
  const std::string text = read_text(path);
  try {
    return cfg.dataset == DatasetKind::kNwpu ? parse_nwpu_annotation(text, vocab) : parse_dota_annotation(text, vocab);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

inline DatasetIndex dataset_split(const ExperimentConfig& cfg, Split split) {
  ensure_synthetic_dataset(cfg);
  if (cfg.dataset == DatasetKind::kNwpu) {
    const auto all = load_dataset_index(cfg.train_images, cfg.train_labels, Split::kTrain, probe_image_size);
    auto [train, test] = split_nwpu(all, cfg.nwpu_train_fraction, cfg.nwpu_split_seed);
    return split == Split::kTrain ? train : test;
  }
  if (split == Split::kTrain) return load_dataset_index(cfg.train_images, cfg.train_labels, split, probe_image_size);
  return load_dataset_index(cfg.test_images, cfg.test_labels, split, probe_image_size);
}

// ---------------------------------------------------------------------------
// tile

struct TileResult {
  fs::path patch_dir;
  fs::path manifest;
  std::size_t patches = 0;
};

inline fs::path tile_dir(const ExperimentConfig& cfg) { return cfg.output_dir / "tiles"; }

inline std::string patch_stem(const std::string& image_id, const TileWindow& w) {
  return image_id + "__" + std::to_string(w.x) + "_" + std::to_string(w.y);
}

// Cuts every training image into T x T patches (zero padded at the far
// edges) and writes patch labels in DOTA format plus a manifest.
inline TileResult cmd_tile(const ExperimentConfig& cfg, const Logger& log = {}) {
  const auto index = dataset_split(cfg, Split::kTrain);
  const auto vocab = cfg.vocabulary();
  TileResult res;
  res.patch_dir = tile_dir(cfg);
  res.manifest = res.patch_dir / "manifest.jsonl";
  fs::remove_all(res.patch_dir);
  fs::create_directories(res.patch_dir / "images");
  fs::create_directories(res.patch_dir / "labelTxt");
  std::vector<ManifestRow> rows;
  for (const auto& rec : index.records) {
    const Image img = read_image(rec.image);
    const auto anns = load_annotations(cfg, rec.annotation);
    const auto plan = plan_tiles(img.width, img.height, cfg.tile.train_size, cfg.tile.train_overlap);
    for (const auto& w : plan.windows) {
      const auto patch = crop_patch(img, w, anns);
      const std::string stem = patch_stem(rec.id(), w);
      write_image(res.patch_dir / "images" / (stem + ".png"), patch.pixels);
      write_text(res.patch_dir / "labelTxt" / (stem + ".txt"), serialize_dota_annotation(patch.annotations, vocab));
      rows.push_back({rec.id(), stem, w});
    }
  }
  std::ostringstream os;
  write_manifest(os, rows);
  write_text(res.manifest, os.str());
  res.patches = rows.size();
  log_to(log, "wrote " + std::to_string(rows.size()) + " patches from " + std::to_string(index.records.size()) +
                  " images");
  return res;
}

// ---------------------------------------------------------------------------
// train

struct LossRow {
  int iteration = 0;
  double lr = 0;
  double total = 0, cls = 0, hbb = 0, obb = 0, rpn_cls = 0, rpn_box = 0;
};

inline std::string format_loss_row(const LossRow& r) {
  nlohmann::ordered_json j;
  j["iteration"] = r.iteration;
  j["lr"] = r.lr;
  j["total"] = r.total;
  j["class"] = r.cls;
  j["hbb"] = r.hbb;
  j["obb"] = r.obb;
  j["rpn_class"] = r.rpn_cls;
  j["rpn_box"] = r.rpn_box;
  return j.dump();
}

inline std::vector<LossRow> read_loss_log(const fs::path& p) {
  std::vector<LossRow> rows;
  std::istringstream is(read_text(p));
  std::string line;
  while (std::getline(is, line)) {
    if (detail::trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line);
    rows.push_back({j.at("iteration").get<int>(), j.at("lr").get<double>(), j.at("total").get<double>(),
                    j.at("class").get<double>(), j.at("hbb").get<double>(), j.at("obb").get<double>(),
                    j.at("rpn_class").get<double>(), j.at("rpn_box").get<double>()});
  }
  return rows;
}

struct TrainResult {
  fs::path checkpoint;
  fs::path loss_log;
  std::vector<LossRow> losses;
};

// Base rate until two thirds of the run, then a tenth of it.
inline double learning_rate_at(const OptimizerParams& o, int iteration) {
  const int decay_at = (2 * o.iterations) / 3;
  return iteration >= decay_at ? o.learning_rate * 0.1 : o.learning_rate;
}

struct TrainingPatch {
  fs::path image;
  std::vector<GroundTruth> gts;
};

inline nn::Var<float> image_tensor(const Image& img, const ChannelStats& stats) {
  nn::Tensor<float> t({3, img.height, img.width});
  const auto v = normalize_contrast(img, stats);
  t.data.assign(v.begin(), v.end());
  return nn::constant(std::move(t));
}

inline KeyValues checkpoint_metadata(const ExperimentConfig& cfg, const ChannelStats& stats, int iteration) {
  KeyValues meta;
  put_channel_stats(meta, stats);
  meta.set("train.iteration", std::to_string(iteration));
  meta.set("dataset.kind", dataset_kind_name(cfg.dataset));
  const auto vocab = cfg.vocabulary();
  std::string names;
  for (const auto& n : vocab.names()) names += (names.empty() ? "" : ",") + n;
  meta.set("dataset.classes", names);
  return meta;
}

// SGD with momentum (v <- mu v + g + wd w; w <- w - lr v) over the tiled
// training set, one shuffled pass per epoch. Single-threaded, so the loss
// log is reproducible bit for bit for a fixed seed.
inline TrainResult cmd_train(const ExperimentConfig& cfg, const Logger& log = {}) {
  const fs::path manifest_path = tile_dir(cfg) / "manifest.jsonl";
  if (!fs::exists(manifest_path)) cmd_tile(cfg, log);
  std::ifstream mis(manifest_path);
  const auto rows = read_manifest(mis);
  if (rows.empty()) throw Error("training manifest is empty");

  const auto vocab = cfg.vocabulary();
  std::vector<TrainingPatch> patches;
  ChannelStatsAccumulator acc;
  for (const auto& r : rows) {
    if (r.window.width != cfg.tile.train_size) throw ConfigError("tiles were cut with a different tile size");
    TrainingPatch p;
    p.image = tile_dir(cfg) / "images" / (r.patch + ".png");
    const auto anns = parse_dota_annotation(read_text(tile_dir(cfg) / "labelTxt" / (r.patch + ".txt")), vocab);
    p.gts = ground_truth_from(anns);
    acc.add(read_image(p.image));
    patches.push_back(std::move(p));
  }
  const ChannelStats stats = acc.finish();

  Model<float> model(cfg.model, cfg.seed);
  const auto& params = model.params();
  std::vector<nn::Tensor<float>> velocity;
  for (const auto& [n, p] : params) velocity.emplace_back(p->value.shape);

  TrainResult res;
  res.loss_log = cfg.output_dir / "loss.jsonl";
  res.checkpoint = cfg.output_dir / "model.ckpt";
  fs::create_directories(cfg.output_dir);
  std::ofstream log_os(res.loss_log, std::ios::trunc);
  if (!log_os) throw Error("cannot write " + res.loss_log.string());

  Rng order_rng(mix_seed(cfg.seed, "order"));
  Rng sample_rng(mix_seed(cfg.seed, "sample"));
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  auto next_patch = [&]() -> const TrainingPatch& {
    if (cursor == order.size()) {
      order.resize(patches.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      order_rng.shuffle(order);
      cursor = 0;
    }
    return patches[order[cursor++]];
  };

  const auto& o = cfg.optim;
  for (int it = 0; it < o.iterations; ++it) {
    model.zero_grad();
    LossRow row;
    row.iteration = it + 1;
    row.lr = learning_rate_at(o, it);
    for (int b = 0; b < o.batch_size; ++b) {
      const auto& patch = next_patch();
      const auto input = image_tensor(read_image(patch.image), stats);
      const auto terms = training_loss(model, input, patch.gts, cfg.detector, sample_rng);
      nn::backward(terms.total);
      row.total += terms.total->value[0];
      row.cls += terms.cls->value[0];
      row.hbb += terms.hbb->value[0];
      row.obb += terms.obb->value[0];
      row.rpn_cls += terms.rpn_cls->value[0];
      row.rpn_box += terms.rpn_box->value[0];
    }
    const double inv = 1.0 / o.batch_size;
    for (double* v : {&row.total, &row.cls, &row.hbb, &row.obb, &row.rpn_cls, &row.rpn_box}) *v *= inv;
    if (!std::isfinite(row.total)) throw Error("loss diverged at iteration " + std::to_string(it + 1));

    double norm_sq = 0;
    for (const auto& [n, p] : params) {
      for (float& g : p->grad.data) {
        g = static_cast<float>(g * inv);
        norm_sq += static_cast<double>(g) * g;
      }
    }
    const double gnorm = std::sqrt(norm_sq);
    const float clip = (o.clip_norm > 0 && gnorm > o.clip_norm) ? static_cast<float>(o.clip_norm / gnorm) : 1.0f;
    const auto lr = static_cast<float>(row.lr), mu = static_cast<float>(o.momentum),
               wd = static_cast<float>(o.weight_decay);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& w = params[k].second->value.data;
      const auto& g = params[k].second->grad.data;
      auto& v = velocity[k].data;
      for (std::size_t i = 0; i < w.size(); ++i) {
        v[i] = mu * v[i] + clip * g[i] + wd * w[i];
        w[i] -= lr * v[i];
      }
    }

    log_os << format_loss_row(row) << '\n';
    res.losses.push_back(row);
    if ((it + 1) % 100 == 0 || it + 1 == o.iterations) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "iter %d/%d  loss %.4f  cls %.4f  obb %.4f  rpn %.4f", it + 1, o.iterations,
                    row.total, row.cls, row.obb, row.rpn_cls + row.rpn_box);
      log_to(log, buf);
    }
    if (o.checkpoint_interval > 0 && (it + 1) % o.checkpoint_interval == 0 && it + 1 < o.iterations) {
      char name[48];
      std::snprintf(name, sizeof name, "iter_%06d.ckpt", it + 1);
      write_checkpoint(cfg.output_dir / "checkpoints" / name,
                       make_checkpoint(model, checkpoint_metadata(cfg, stats, it + 1)));
    }
  }
  log_os.flush();
  write_checkpoint(res.checkpoint, make_checkpoint(model, checkpoint_metadata(cfg, stats, o.iterations)));
  return res;
}

// ---------------------------------------------------------------------------
// infer

struct LoadedModel {
  Model<float> model;
  ChannelStats stats;
};

// Loads a checkpoint and checks it against the experiment's model config.
inline LoadedModel load_model(const ExperimentConfig& cfg, const fs::path& checkpoint) {
  const auto ck = read_checkpoint(checkpoint);
  const auto want = model_config_to_kv(cfg.model).entries();
  const auto have = model_config_to_kv(checkpoint_model_config(ck)).entries();
  for (const auto& [k, v] : want) {
    auto it = have.find(k);
    if (it == have.end() || it->second != v) {
      throw ShapeError("checkpoint was trained with " + k + " = " + (it == have.end() ? "?" : it->second) +
                       ", config has " + v);
    }
  }
  return {model_from_checkpoint(ck), channel_stats_from(ck.meta)};
}

struct ImageDetections {
  std::vector<ScoredDetection> obb;
  std::vector<ScoredDetection> hbb;
};

// Tiles the image with the inference window, detects per patch and
// stitches the results back into image coordinates.
inline ImageDetections detect_image(const LoadedModel& m, const Image& img, const ExperimentConfig& cfg) {
  const auto plan = plan_tiles(img.width, img.height, cfg.tile.infer_size, cfg.tile.infer_overlap);
  std::vector<PatchDetections> obb, hbb;
  for (const auto& w : plan.windows) {
    const auto patch = crop_patch(img, w, {});
    const auto d = detect(m.model, image_tensor(patch.pixels, m.stats), cfg.detector);
    obb.push_back({w, d.obb});
    hbb.push_back({w, d.hbb});
  }
  return {stitch_detections(obb, cfg.detector.nms_threshold), stitch_detections(hbb, cfg.detector.nms_threshold)};
}

struct InferResult {
  fs::path detection_dir;
  DetectionsByImage obb;
  DetectionsByImage hbb;
};

inline fs::path detection_dir(const ExperimentConfig& cfg) { return cfg.output_dir / "detections"; }

// Runs over the test split, or over `images` when given.
inline InferResult cmd_infer(const ExperimentConfig& cfg, const fs::path& checkpoint,
                             const std::optional<std::vector<fs::path>>& images = std::nullopt,
                             const Logger& log = {}) {
  const auto m = load_model(cfg, checkpoint);
  std::vector<std::pair<std::string, fs::path>> inputs;
  if (images) {
    for (const auto& p : *images) inputs.emplace_back(p.stem().string(), p);
  } else {
    for (const auto& r : dataset_split(cfg, Split::kTest).records) inputs.emplace_back(r.id(), r.image);
  }
  InferResult res;
  res.detection_dir = detection_dir(cfg);
  for (const auto& [id, path] : inputs) {
    const auto d = detect_image(m, read_image(path), cfg);
    res.obb[id] = d.obb;
    res.hbb[id] = d.hbb;
  }
  const auto vocab = cfg.vocabulary();
  write_detection_files(res.detection_dir, res.obb, vocab, BoxKind::kOBB);
  write_detection_files(res.detection_dir, res.hbb, vocab, BoxKind::kHBB);
  log_to(log, "detections for " + std::to_string(inputs.size()) + " images in " + res.detection_dir.string());
  return res;
}

// ---------------------------------------------------------------------------
// eval

inline GroundTruthByImage test_ground_truth(const ExperimentConfig& cfg, BoxKind kind) {
  GroundTruthByImage gts;
  for (const auto& r : dataset_split(cfg, Split::kTest).records) {
    gts[r.id()] = gt_instances(load_annotations(cfg, r.annotation), kind);
  }
  return gts;
}

struct EvalReport {
  EvalResult result;
  fs::path text;
  fs::path kv;
};

inline EvalReport cmd_eval(const ExperimentConfig& cfg, const fs::path& det_dir, BoxKind kind) {
  const auto vocab = cfg.vocabulary();
  const auto dets = read_detection_files(det_dir, vocab, kind);
  EvalReport rep;
  rep.result = evaluate(dets, test_ground_truth(cfg, kind), vocab.size(), kind, cfg.eval_iou);
  const std::string task = kind == BoxKind::kOBB ? "obb" : "hbb";
  rep.text = cfg.output_dir / ("report_" + task + ".txt");
  rep.kv = cfg.output_dir / ("report_" + task + ".kv");
  write_text(rep.text, format_report(rep.result, vocab, kind));
  write_text(rep.kv, format_report_kv(rep.result, vocab));
  return rep;
}

// ---------------------------------------------------------------------------
// ablate

struct AblationVariant {
  std::string name;
  std::string slug;
  bool gcnet, plcnet, attention;
};

inline const std::vector<AblationVariant>& ablation_variants() {
  static const std::vector<AblationVariant> v{
      {"Baseline (Faster RCNN with FPN)", "baseline", false, false, false},
      {"Baseline + GCNet", "gcnet", true, false, false},
      {"Baseline + PLCNet", "plcnet", false, true, false},
      {"Baseline + Spatial-Scale-Aware Attention", "attention", false, false, true},
      {"Baseline + GCNet + PLCNet", "gcnet_plcnet", true, true, false},
      {"Baseline + GCNet + Attention", "gcnet_attention", true, false, true},
      {"Baseline + PLCNet + Attention", "plcnet_attention", false, true, true},
      {"Full model (GCNet + PLCNet + Attention)", "full", true, true, true},
  };
  return v;
}

struct AblationRow {
  AblationVariant variant;
  double obb_map = 0;
  double hbb_map = 0;
};

inline ExperimentConfig variant_config(const ExperimentConfig& cfg, const AblationVariant& v) {
  ExperimentConfig c = cfg;
  c.model.gcnet = v.gcnet;
  c.model.plcnet = v.plcnet;
  c.model.attention = v.attention;
  c.output_dir = cfg.output_dir / "ablation" / v.slug;
  return c;
}

inline std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-42s %5s %6s %9s %8s %8s\n", "model", "gcnet", "plcnet", "attention", "OBB mAP",
                "HBB mAP");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-42s %5s %6s %9s %8.4f %8.4f\n", r.variant.name.c_str(),
                  r.variant.gcnet ? "on" : "off", r.variant.plcnet ? "on" : "off", r.variant.attention ? "on" : "off",
                  r.obb_map, r.hbb_map);
    out += buf;
  }
  return out;
}

// Trains and evaluates the eight switch combinations under one seed.
inline std::vector<AblationRow> cmd_ablate(const ExperimentConfig& cfg, const Logger& log = {}) {
  std::vector<AblationRow> rows;
  std::string kv;
  for (const auto& v : ablation_variants()) {
    log_to(log, "ablation: " + v.name);
    const auto c = variant_config(cfg, v);
    const auto tr = cmd_train(c, log);
    const auto inf = cmd_infer(c, tr.checkpoint);
    AblationRow row{v, cmd_eval(c, inf.detection_dir, BoxKind::kOBB).result.map,
                    cmd_eval(c, inf.detection_dir, BoxKind::kHBB).result.map};
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s.obb_map = %.6f\n%s.hbb_map = %.6f\n", v.slug.c_str(), row.obb_map,
                  v.slug.c_str(), row.hbb_map);
    kv += buf;
    rows.push_back(row);
    // Keep partial results visible while the remaining variants train.
    write_text(cfg.output_dir / "ablation" / "table.txt", format_ablation_table(rows));
    write_text(cfg.output_dir / "ablation" / "table.kv", kv);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// plot

struct PlotResult {
  std::vector<fs::path> files;
};

// Overlay of the given detections on the image.
inline fs::path plot_overlay(const fs::path& image, const std::vector<ScoredDetection>& dets, const fs::path& out) {
  write_image(out, draw_detections(read_image(image), dets));
  return out;
}

// Attention maps S_2..S_5 of a model for one image, each upscaled to the
// image size. The image is zero padded to a multiple of 32 first.
inline std::vector<fs::path> plot_attention(const LoadedModel& m, const fs::path& image, const fs::path& out_dir) {
  if (!m.model.config().attention) throw ConfigError("the checkpoint has no attention branch");
  const Image img = read_image(image);
  const int w = (img.width + 31) / 32 * 32, h = (img.height + 31) / 32 * 32;
  const TileWindow win{0, 0, w, h, w - img.width, h - img.height};
  const auto patch = crop_patch(img, win, {});
  nn::NoGradGuard guard;
  const auto c = m.model.backbone_forward(image_tensor(patch.pixels, m.stats));
  const auto att = m.model.attention_forward(m.model.fpn_forward(c));
  std::vector<fs::path> files;
  for (int l = 0; l < kNumLevels; ++l) {
    // Crop the padded border back off before scaling.
    const auto& s = att.s[l]->value;
    const int stride = kLevelStrides[l];
    const int vh = std::max(1, (img.height + stride - 1) / stride), vw = std::max(1, (img.width + stride - 1) / stride);
    nn::Tensor<float> valid({1, vh, vw});
    for (int y = 0; y < vh; ++y) {
      for (int x = 0; x < vw; ++x) valid.at(0, y, x) = s.at(0, y, x);
    }
    const fs::path p = out_dir / (image.stem().string() + "_S" + std::to_string(l + 2) + ".png");
    write_image(p, render_heatmap(valid, img.width, img.height));
    files.push_back(p);
  }
  return files;
}

// Bar chart of per-class AP from a report key-value file.
inline fs::path plot_report(const fs::path& report_kv, const fs::path& out) {
  const auto kv = KeyValues::load(report_kv);
  std::vector<std::pair<std::string, double>> bars;
  for (const auto& [k, v] : kv.entries()) {
    if (k.rfind("ap.", 0) == 0) bars.emplace_back(k.substr(3), kv.get_double(k, 0));
  }
  const int bar_w = 40, gap = 20, height = 240;
  const int width = std::max(200, static_cast<int>(bars.size()) * (bar_w + gap) + gap);
  cv::Mat m(height + 40, width, CV_8UC3, cv::Scalar(255, 255, 255));
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const int x = gap + static_cast<int>(i) * (bar_w + gap);
    const int top = height - static_cast<int>(std::lround(bars[i].second * (height - 20)));
    const auto rgb = class_color(static_cast<int>(i));
    cv::rectangle(m, cv::Point(x, top), cv::Point(x + bar_w, height), cv::Scalar(rgb[2], rgb[1], rgb[0]), cv::FILLED);
    cv::putText(m, bars[i].first.substr(0, 8), cv::Point(x, height + 15), cv::FONT_HERSHEY_PLAIN, 0.8,
                cv::Scalar(0, 0, 0));
    char ap[16];
    std::snprintf(ap, sizeof ap, "%.2f", bars[i].second);
    cv::putText(m, ap, cv::Point(x, top - 4), cv::FONT_HERSHEY_PLAIN, 0.8, cv::Scalar(0, 0, 0));
  }
  write_image(out, from_mat(m));
  return out;
}

struct PlotRequest {
  std::optional<fs::path> image;
  std::optional<fs::path> detections;  // directory of Task1_ files
  std::optional<fs::path> checkpoint;  // enables attention heatmaps
  std::optional<fs::path> report;      // report .kv file
};

inline PlotResult cmd_plot(const ExperimentConfig& cfg, const PlotRequest& req) {
  PlotResult res;
  const fs::path out_dir = cfg.output_dir / "plots";
  if (!req.image && !req.report) throw Error("plot needs an image or a report");
  if (req.report) {
    if (!fs::exists(*req.report)) throw Error("report not found: " + req.report->string());
    res.files.push_back(plot_report(*req.report, out_dir / (req.report->stem().string() + ".png")));
  }
  if (req.image) {
    if (!fs::exists(*req.image)) throw Error("image not found: " + req.image->string());
    std::vector<ScoredDetection> dets;
    if (req.detections) {
      if (!fs::is_directory(*req.detections)) throw Error("detection directory not found");
      auto all = read_detection_files(*req.detections, cfg.vocabulary(), BoxKind::kOBB);
      dets = all[req.image->stem().string()];
    }
    res.files.push_back(plot_overlay(*req.image, dets, out_dir / (req.image->stem().string() + "_overlay.png")));
    if (req.checkpoint) {
      const auto m = load_model(cfg, *req.checkpoint);
      for (auto& p : plot_attention(m, *req.image, out_dir)) res.files.push_back(p);
    }
  }
  return res;
}

}  // namespace cadnet
