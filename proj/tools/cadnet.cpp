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

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cadnet/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

cadnet::ExperimentConfig load(const std::string& path, const std::optional<std::string>& out,
                              const std::optional<long>& seed) {
  auto kv = cadnet::KeyValues::load(path);
  // Command-line overrides go in before paths are resolved, so that derived
  // locations follow the chosen output directory.
  if (out) kv.set("output.dir", fs::absolute(*out).string());
  if (seed) kv.set("seed", std::to_string(*seed));
  const fs::path p(path);
  auto cfg = cadnet::experiment_config_from(kv, p.parent_path().empty() ? "." : p.parent_path());
  cfg.source = p;
  return cfg;
}

void print_log(const std::string& msg) { std::cerr << msg << '\n'; }

cadnet::BoxKind parse_task(const std::string& t) {
  if (t == "obb") return cadnet::BoxKind::kOBB;
  if (t == "hbb") return cadnet::BoxKind::kHBB;
  throw cadnet::ConfigError("--task must be obb or hbb");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cadnet: context-aware oriented object detection for aerial imagery"};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::string> out, checkpoint;
  std::optional<long> seed;
  auto common = [&](CLI::App* sub, bool needs_checkpoint) {
    sub->add_option("--config", config, "experiment config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory (overrides output.dir)");
    sub->add_option("--seed", seed, "random seed (overrides seed)");
    auto* ck = sub->add_option("--checkpoint", checkpoint, "model checkpoint");
    if (needs_checkpoint) ck->required();
  };

  auto* tile = app.add_subcommand("tile", "cut training images into patches and write a manifest");
  common(tile, false);
  auto* train = app.add_subcommand("train", "train a model on the tiled training set");
  common(train, false);
  auto* infer = app.add_subcommand("infer", "detect objects in test images and write per-class files");
  common(infer, true);
  std::vector<std::string> images;
  infer->add_option("--image", images, "images to process instead of the test split")->check(CLI::ExistingFile);
  auto* eval = app.add_subcommand("eval", "score detection files against the test ground truth");
  common(eval, false);
  std::string task = "obb";
  std::optional<std::string> det_dir;
  eval->add_option("--task", task, "obb or hbb")->check(CLI::IsMember({"obb", "hbb"}));
  eval->add_option("--detections", det_dir, "directory of detection files (default: <out>/detections)");
  auto* ablate = app.add_subcommand("ablate", "train and evaluate all eight branch combinations");
  common(ablate, false);
  auto* plot = app.add_subcommand("plot", "render detection overlays, attention maps or AP charts");
  common(plot, false);
  std::optional<std::string> plot_image, plot_report;
  plot->add_option("--image", plot_image, "image to annotate");
  plot->add_option("--detections", det_dir, "directory of detection files to overlay");
  plot->add_option("--report", plot_report, "report .kv file to chart");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*tile) {
      const auto cfg = load(config, out, seed);
      const auto r = cadnet::cmd_tile(cfg, print_log);
      std::cout << r.manifest.string() << '\n';
    } else if (*train) {
      const auto cfg = load(config, out, seed);
      const auto r = cadnet::cmd_train(cfg, print_log);
      std::cout << r.checkpoint.string() << '\n' << r.loss_log.string() << '\n';
    } else if (*infer) {
      const auto cfg = load(config, out, seed);
      std::optional<std::vector<fs::path>> list;
      if (!images.empty()) list.emplace(images.begin(), images.end());
      const auto r = cadnet::cmd_infer(cfg, *checkpoint, list, print_log);
      std::cout << r.detection_dir.string() << '\n';
    } else if (*eval) {
      const auto cfg = load(config, out, seed);
      const auto kind = parse_task(task);
      const auto rep = cadnet::cmd_eval(cfg, det_dir ? fs::path(*det_dir) : cadnet::detection_dir(cfg), kind);
      std::cout << cadnet::format_report(rep.result, cfg.vocabulary(), kind);
    } else if (*ablate) {
      const auto cfg = load(config, out, seed);
      const auto rows = cadnet::cmd_ablate(cfg, print_log);
      std::cout << cadnet::format_ablation_table(rows);
    } else if (*plot) {
      const auto cfg = load(config, out, seed);
      cadnet::PlotRequest req;
      if (plot_image) req.image = *plot_image;
      if (det_dir) req.detections = *det_dir;
      if (checkpoint) req.checkpoint = *checkpoint;
      if (plot_report) req.report = *plot_report;
      for (const auto& f : cadnet::cmd_plot(cfg, req).files) std::cout << f.string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "cadnet: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
