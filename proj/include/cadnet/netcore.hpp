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

// The detection graph: a small convolutional backbone (C2..C5), a feature
// pyramid (P2..P5), per-level sigmoid attention (S_i, A_i = S_i * P_i), the
// global context branch over C5, a shared RPN head, region pooling, the
// pyramid local context branch and the fused box/class head.

#pragma once

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cadnet/error.hpp"
#include "cadnet/geometry.hpp"
#include "cadnet/ops.hpp"
#include "cadnet/random.hpp"
#include "cadnet/targets.hpp"
#include "cadnet/tensor.hpp"

namespace cadnet {

inline constexpr int kNumLevels = 4;                      // P2..P5
inline constexpr std::array<int, kNumLevels> kLevelStrides{4, 8, 16, 32};

struct ModelConfig {
  int stem_width = 16;
  std::array<int, kNumLevels> backbone_widths{16, 24, 32, 48};  // C2..C5
  int d_fpn = 16;
  int d_g = 16;
  int head_hidden = 128;
  int num_classes = 3;
  AnchorConfig anchors;
  double roi_canonical_size = 224.0;
  int roi_canonical_level = 4;
  nn::RoiAlignParams roi;
  bool gcnet = true;
  bool plcnet = true;
  bool attention = true;
  bool rpn_on_attention = true;

  int d_local() const { return d_fpn; }
  int attention_hidden() const { return std::max(1, d_fpn / 2); }
  int region_width() const { return d_fpn * roi.output_size * roi.output_size; }
  // Width of [region ; global ; local] fed to the first head layer.
  int head_input_width() const {
    return region_width() + (gcnet ? d_g : 0) + (plcnet ? d_local() : 0);
  }
};

// Pyramid level (0-based, i.e. P2 -> 0) a region is pooled from.
inline int roi_level(const HBB& r, double canonical_size, int canonical_level) {
  const double scale = std::sqrt(std::max(r.area(), 1e-12));
  const int k = static_cast<int>(std::floor(canonical_level + std::log2(scale / canonical_size + 1e-8)));
  return std::clamp(k, 2, 5) - 2;
}

template <typename T>
struct BackboneOutput {
  std::array<nn::Var<T>, kNumLevels> c;
};

template <typename T>
struct FeaturePyramid {
  std::array<nn::Var<T>, kNumLevels> p;
};

template <typename T>
struct AttentionPyramid {
  std::array<nn::Var<T>, kNumLevels> s;  // 1 x H x W each, in (0, 1)
  std::array<nn::Var<T>, kNumLevels> a;  // s * p
};

template <typename T>
struct RpnOutput {
  nn::Var<T> objectness;  // N x 1 logits
  nn::Var<T> deltas;      // N x 4
  std::vector<std::pair<int, int>> grid;
};

template <typename T>
struct HeadOutput {
  nn::Var<T> cls;  // R x (K + 1), column 0 = background
  nn::Var<T> hbb;  // R x 4K
  nn::Var<T> obb;  // R x 5K
};

struct ParamSpec {
  std::string name;
  std::vector<int> shape;
};

template <typename T>
class Model {
 public:
  using Var = nn::Var<T>;

  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.d_fpn < 1 || cfg.d_g < 1 || cfg.head_hidden < 1 || cfg.num_classes < 1) {
      throw ConfigError("model dimensions must be positive");
    }
    if (cfg.anchors.sizes.size() != kNumLevels) throw ConfigError("need one anchor size per level");
    build(seed);
  }

  const ModelConfig& config() const { return cfg_; }
  const std::vector<std::pair<std::string, Var>>& params() const { return params_; }

  const Var& param(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("no parameter group '" + name + "'");
    return params_[it->second].second;
  }
  bool has_param(const std::string& name) const { return index_.count(name) != 0; }

  void zero_grad() {
    for (auto& [n, p] : params_) {
      p->ensure_grad();
      p->grad.fill(T(0));
    }
  }

  // --- stages --------------------------------------------------------------

  // image: 3 x H x W with H, W divisible by 32.
  BackboneOutput<T> backbone_forward(const Var& image) const {
    const auto& s = image->value.shape;
    if (s.size() != 3 || s[0] != 3) throw ShapeError("backbone expects a 3 x H x W image");
    if (s[1] % 32 != 0 || s[2] % 32 != 0) {
      throw ShapeError("backbone input " + std::to_string(s[1]) + "x" + std::to_string(s[2]) +
                       " is not divisible by 32");
    }
    BackboneOutput<T> out;
    Var x = conv_relu(image, "backbone.stem.0", 2);
    static const std::array<const char*, kNumLevels> names{"c2", "c3", "c4", "c5"};
    for (int l = 0; l < kNumLevels; ++l) {
      const std::string base = std::string("backbone.") + names[l];
      x = conv_relu(x, base + ".0", 2);
      x = conv_relu(x, base + ".1", 1);
      out.c[l] = x;
    }
    return out;
  }

  FeaturePyramid<T> fpn_forward(const BackboneOutput<T>& c) const {
    FeaturePyramid<T> out;
    Var top;
    for (int l = kNumLevels - 1; l >= 0; --l) {
      const std::string lvl = std::to_string(l + 2);
      Var lat = conv(c.c[l], "fpn.lateral." + lvl, 1, 0);
      if (top) {
        lat = nn::add(lat, nn::upsample_nearest(top, lat->value.dim(1), lat->value.dim(2)));
      }
      out.p[l] = conv(lat, "fpn.smooth." + lvl, 1, 1);
      top = out.p[l];
    }
    return out;
  }

  // With attention disabled, S is empty and A aliases P.
  AttentionPyramid<T> attention_forward(const FeaturePyramid<T>& p) const {
    AttentionPyramid<T> out;
    for (int l = 0; l < kNumLevels; ++l) {
      if (!cfg_.attention) {
        out.a[l] = p.p[l];
        continue;
      }
      const std::string base = "attention.p" + std::to_string(l + 2);
      Var h = conv_relu(p.p[l], base + ".0", 1);
      out.s[l] = nn::sigmoid(conv(h, base + ".1", 1, 1));
      out.a[l] = nn::mul_channel_broadcast(out.s[l], p.p[l]);
    }
    return out;
  }

  // Global context vector, 1 x D_g.
  Var gcnet_forward(const Var& c5) const {
    if (!cfg_.gcnet) throw ConfigError("global context branch is disabled");
    Var h = conv_relu(c5, "gcnet.conv.0", 1);
    h = conv(h, "gcnet.conv.1", 1, 1);
    return nn::reshape(nn::spatial_mean(h), {1, cfg_.d_g});
  }

  RpnOutput<T> rpn_forward(const std::array<Var, kNumLevels>& levels) const {
    RpnOutput<T> out;
    std::vector<Var> obj, del;
    for (int l = 0; l < kNumLevels; ++l) {
      Var h = conv_relu(levels[l], "rpn.conv.0", 1);
      obj.push_back(conv(h, "rpn.objectness.0", 1, 0));
      del.push_back(conv(h, "rpn.deltas.0", 1, 0));
      out.grid.emplace_back(levels[l]->value.dim(1), levels[l]->value.dim(2));
    }
    const int a = cfg_.anchors.per_cell();
    out.objectness = nn::gather_anchor_outputs(obj, a, 1);
    out.deltas = nn::gather_anchor_outputs(del, a, 4);
    return out;
  }

  // Region features (R x D x 7 x 7) from the level each region maps to.
  Var roi_extract(const std::array<Var, kNumLevels>& levels, std::span<const HBB> regions) const {
    std::vector<int> lvl(regions.size());
    for (std::size_t i = 0; i < regions.size(); ++i) {
      lvl[i] = roi_level(regions[i], cfg_.roi_canonical_size, cfg_.roi_canonical_level);
    }
    return nn::roi_align<T>({levels.begin(), levels.end()}, kLevelStrides, regions, lvl, cfg_.roi);
  }

  // Pools every region from all four levels before fusing.
  Var plcnet_pooled(const std::array<Var, kNumLevels>& levels, std::span<const HBB> regions) const {
    std::vector<Var> blocks;
    for (int l = 0; l < kNumLevels; ++l) {
      std::vector<int> lvl(regions.size(), l);
      blocks.push_back(nn::roi_align<T>({levels.begin(), levels.end()}, kLevelStrides, regions, lvl, cfg_.roi));
    }
    return nn::concat_channels(blocks);
  }

  // Local context vectors, R x D_l.
  Var plcnet_forward(const std::array<Var, kNumLevels>& levels, std::span<const HBB> regions) const {
    if (!cfg_.plcnet) throw ConfigError("local context branch is disabled");
    Var fused = nn::relu(nn::conv1x1_regions(plcnet_pooled(levels, regions),
                                             param("plcnet.fuse.0.weight"), param("plcnet.fuse.0.bias")));
    return nn::spatial_mean(fused);
  }

  // `global` and `local` may be null when their branch is disabled.
  HeadOutput<T> head_forward(const Var& region, const Var& global, const Var& local) const {
    if (region->value.numel() != static_cast<std::size_t>(region->value.dim(0)) * cfg_.region_width()) {
      throw ShapeError("head: region feature width mismatch");
    }
    if (cfg_.gcnet != static_cast<bool>(global) || cfg_.plcnet != static_cast<bool>(local)) {
      throw ShapeError("head: context inputs do not match the enabled branches");
    }
    // The first layer acts on [region ; global ; local]; its weight is kept
    // as three column blocks so each context branch owns its slice.
    Var h = nn::linear(region, param("head.fc_region.0.weight"), param("head.fc_region.0.bias"));
    if (global) {
      if (global->value.numel() != static_cast<std::size_t>(cfg_.d_g)) throw ShapeError("head: global width");
      h = nn::add_row_broadcast(h, nn::linear(global, param("head.fc_global.0.weight"), Var{}));
    }
    if (local) {
      if (local->value.dim(0) != region->value.dim(0) || local->value.dim(1) != cfg_.d_local()) {
        throw ShapeError("head: local context shape");
      }
      h = nn::add(h, nn::linear(local, param("head.fc_local.0.weight"), Var{}));
    }
    h = nn::relu(h);
    h = nn::relu(nn::linear(h, param("head.fc.1.weight"), param("head.fc.1.bias")));
    HeadOutput<T> out;
    out.cls = nn::linear(h, param("head.cls.0.weight"), param("head.cls.0.bias"));
    out.hbb = nn::linear(h, param("head.hbb.0.weight"), param("head.hbb.0.bias"));
    out.obb = nn::linear(h, param("head.obb.0.weight"), param("head.obb.0.bias"));
    return out;
  }

  // Every parameter group this configuration owns, in registration order.
  static std::vector<ParamSpec> param_specs(const ModelConfig& cfg) {
    std::vector<ParamSpec> specs;
    auto convp = [&](const std::string& n, int out, int in, int k) {
      specs.push_back({n + ".weight", {out, in, k, k}});
      specs.push_back({n + ".bias", {out}});
    };
    auto linp = [&](const std::string& n, int out, int in, bool bias) {
      specs.push_back({n + ".weight", {out, in}});
      if (bias) specs.push_back({n + ".bias", {out}});
    };
    convp("backbone.stem.0", cfg.stem_width, 3, 3);
    int in = cfg.stem_width;
    static const std::array<const char*, kNumLevels> names{"c2", "c3", "c4", "c5"};
    for (int l = 0; l < kNumLevels; ++l) {
      const int w = cfg.backbone_widths[l];
      convp(std::string("backbone.") + names[l] + ".0", w, in, 3);
      convp(std::string("backbone.") + names[l] + ".1", w, w, 3);
      in = w;
    }
    for (int l = 0; l < kNumLevels; ++l) {
      convp("fpn.lateral." + std::to_string(l + 2), cfg.d_fpn, cfg.backbone_widths[l], 1);
    }
    for (int l = 0; l < kNumLevels; ++l) {
      convp("fpn.smooth." + std::to_string(l + 2), cfg.d_fpn, cfg.d_fpn, 3);
    }
    if (cfg.attention) {
      for (int l = 0; l < kNumLevels; ++l) {
        const std::string base = "attention.p" + std::to_string(l + 2);
        convp(base + ".0", cfg.attention_hidden(), cfg.d_fpn, 3);
        convp(base + ".1", 1, cfg.attention_hidden(), 3);
      }
    }
    if (cfg.gcnet) {
      convp("gcnet.conv.0", cfg.d_g, cfg.backbone_widths[3], 3);
      convp("gcnet.conv.1", cfg.d_g, cfg.d_g, 3);
    }
    const int a = cfg.anchors.per_cell();
    convp("rpn.conv.0", cfg.d_fpn, cfg.d_fpn, 3);
    convp("rpn.objectness.0", a, cfg.d_fpn, 1);
    convp("rpn.deltas.0", 4 * a, cfg.d_fpn, 1);
    if (cfg.plcnet) convp("plcnet.fuse.0", cfg.d_local(), kNumLevels * cfg.d_fpn, 1);
    linp("head.fc_region.0", cfg.head_hidden, cfg.region_width(), true);
    if (cfg.gcnet) linp("head.fc_global.0", cfg.head_hidden, cfg.d_g, false);
    if (cfg.plcnet) linp("head.fc_local.0", cfg.head_hidden, cfg.d_local(), false);
    linp("head.fc.1", cfg.head_hidden, cfg.head_hidden, true);
    linp("head.cls.0", cfg.num_classes + 1, cfg.head_hidden, true);
    linp("head.hbb.0", 4 * cfg.num_classes, cfg.head_hidden, true);
    linp("head.obb.0", 5 * cfg.num_classes, cfg.head_hidden, true);
    return specs;
  }

  // Replaces a group's values (checkpoint loading, tests).
  void set_param(const std::string& name, const nn::Tensor<T>& value) {
    const Var& p = param(name);
    if (p->value.shape != value.shape) {
      throw ShapeError("parameter '" + name + "' expects " + nn::shape_string(p->value.shape) +
                       ", got " + nn::shape_string(value.shape));
    }
    p->value.data = value.data;
  }

 private:
  // Small-std init for output layers so the network starts near a neutral
  // prediction; He init elsewhere. Each group draws from its own stream so
  // groups shared between ablation variants start identical.
  double init_std(const ParamSpec& s) const {
    const auto& n = s.name;
    auto starts = [&](const char* p) { return n.rfind(p, 0) == 0; };
    if (starts("rpn.objectness") || starts("rpn.deltas") || starts("head.cls") ||
        (starts("attention.") && n.find(".1.") != std::string::npos)) {
      return 0.01;
    }
    if (starts("head.hbb") || starts("head.obb")) return 0.001;
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < s.shape.size(); ++i) fan_in *= static_cast<std::size_t>(s.shape[i]);
    if (starts("head.fc_")) {
      // The three first-layer blocks share the fan-in of the full model,
      // whatever branches are switched on, so ablation variants start from
      // identical shared weights.
      return std::sqrt(2.0 / static_cast<double>(cfg_.region_width() + cfg_.d_g + cfg_.d_local()));
    }
    return std::sqrt(2.0 / static_cast<double>(fan_in));
  }

  void build(std::uint64_t seed) {
    for (const auto& spec : param_specs(cfg_)) {
      nn::Tensor<T> t(spec.shape);
      const bool is_bias = spec.name.size() >= 5 && spec.name.compare(spec.name.size() - 5, 5, ".bias") == 0;
      if (!is_bias) {
        Rng rng(mix_seed(seed, spec.name));
        const double sd = init_std(spec);
        for (auto& v : t.data) v = static_cast<T>(sd * rng.normal());
      }
      index_[spec.name] = params_.size();
      params_.emplace_back(spec.name, nn::parameter(std::move(t)));
    }
  }

  Var conv(const Var& x, const std::string& layer, int stride, int pad) const {
    return nn::conv2d(x, param(layer + ".weight"), param(layer + ".bias"), stride, pad);
  }
  Var conv_relu(const Var& x, const std::string& layer, int stride) const {
    return nn::relu(conv(x, layer, stride, 1));
  }

  ModelConfig cfg_;
  std::vector<std::pair<std::string, Var>> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace cadnet
