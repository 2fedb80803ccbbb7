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

// Procedural toy corpus: rotated rectangles of three classes on water,
// land or split coastline scenes. Ships and vehicles share one appearance
// and differ only in where they sit (ships on water, vehicles on land),
// so the surroundings carry the class signal. Planes are bright and may
// appear anywhere on land.

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "cadnet/config.hpp"
#include "cadnet/geometry.hpp"
#include "cadnet/image.hpp"
#include "cadnet/ingest.hpp"
#include "cadnet/random.hpp"

namespace cadnet {

inline constexpr int kSyntheticPlane = 0;
inline constexpr int kSyntheticShip = 1;
inline constexpr int kSyntheticVehicle = 2;

// Bumped whenever the generator changes so cached corpora are rebuilt.
inline constexpr int kSyntheticGeneratorVersion = 2;

struct SyntheticSample {
  Image image;
  std::vector<AnnotatedObject> objects;
};

enum class SceneKind { kWater, kLand, kCoast };

namespace detail {

// Half-plane n.(p - o) > 0 is water in coast scenes.
struct Scene {
  SceneKind kind = SceneKind::kLand;
  Point origin{};
  Point normal{1, 0};

  bool water_at(Point p) const {
    switch (kind) {
      case SceneKind::kWater: return true;
      case SceneKind::kLand: return false;
      case SceneKind::kCoast: break;
    }
    return dot(normal, p - origin) > 0;
  }
  // Signed distance to the shore (positive on water); huge off-coast.
  double shore_distance(Point p) const {
    if (kind == SceneKind::kWater) return 1e9;
    if (kind == SceneKind::kLand) return -1e9;
    return dot(normal, p - origin);
  }
};

inline std::uint8_t clamp_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

inline void paint_background(Image& img, const Scene& scene, Rng& rng) {
  const int n = img.width;
  // Land: a base tone with a few soft field patches.
  struct Patch {
    double x0, y0, x1, y1, r, g, b;
  };
  std::vector<Patch> patches;
  const int n_patches = rng.randint(2, 5);
  for (int i = 0; i < n_patches; ++i) {
    const double w = rng.uniform(0.2, 0.5) * n, h = rng.uniform(0.2, 0.5) * n;
    const double x = rng.uniform(-0.1, 0.9) * n, y = rng.uniform(-0.1, 0.9) * n;
    patches.push_back({x, y, x + w, y + h, rng.uniform(-18, 18), rng.uniform(-10, 22), rng.uniform(-15, 10)});
  }
  const double wave_a = rng.uniform(0, std::numbers::pi), wave_f = rng.uniform(0.15, 0.3);
  const double wx = std::cos(wave_a) * wave_f, wy = std::sin(wave_a) * wave_f;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const Point p{x + 0.5, y + 0.5};
      double r, g, b;
      if (scene.water_at(p)) {
        const double wave = 6.0 * std::sin(wx * p.x + wy * p.y);
        r = 38 + wave;
        g = 72 + wave;
        b = 118 + 1.5 * wave;
      } else {
        r = 122, g = 108, b = 78;
        for (const auto& pt : patches) {
          if (p.x >= pt.x0 && p.x < pt.x1 && p.y >= pt.y0 && p.y < pt.y1) {
            r += pt.r;
            g += pt.g;
            b += pt.b;
          }
        }
      }
      const double noise = 5.0;
      img.at(x, y, 0) = clamp_u8(r + noise * rng.normal());
      img.at(x, y, 1) = clamp_u8(g + noise * rng.normal());
      img.at(x, y, 2) = clamp_u8(b + noise * rng.normal());
    }
  }
}

inline void paint_box(Image& img, const OBB& box, const double rgb[3], Rng& rng) {
  const HBB ext = obb_to_hbb(box);
  const double t = box.theta * std::numbers::pi / 180.0;
  const double c = std::cos(t), s = std::sin(t);
  const int x0 = std::max(0, static_cast<int>(std::floor(ext.xmin)));
  const int y0 = std::max(0, static_cast<int>(std::floor(ext.ymin)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(ext.xmax)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(ext.ymax)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = x + 0.5 - box.cx, dy = y + 0.5 - box.cy;
      const double u = c * dx + s * dy, v = -s * dx + c * dy;
      if (std::abs(u) > box.w / 2 || std::abs(v) > box.h / 2) continue;
      // A darker rim makes the rectangle outline visible on any background.
      const bool rim = std::abs(u) > box.w / 2 - 1.0 || std::abs(v) > box.h / 2 - 1.0;
      const double k = rim ? 0.7 : 1.0;
      for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = clamp_u8(k * rgb[ch] + 4.0 * rng.normal());
    }
  }
}

}  // namespace detail

// One image; deterministic in (params.seed, split, index).
inline SyntheticSample generate_synthetic(const SyntheticParams& params, const std::string& split, int index) {
  Rng rng(mix_seed(params.seed, split + "/" + std::to_string(index)));
  const int n = params.image_size;
  SyntheticSample out;
  out.image = Image(n, n);

  detail::Scene scene;
  const double u = rng.uniform();
  scene.kind = u < 0.35 ? SceneKind::kWater : (u < 0.7 ? SceneKind::kLand : SceneKind::kCoast);
  if (scene.kind == SceneKind::kCoast) {
    const double a = rng.uniform(0, 2 * std::numbers::pi);
    scene.normal = {std::cos(a), std::sin(a)};
    scene.origin = {n * rng.uniform(0.35, 0.65), n * rng.uniform(0.35, 0.65)};
  }
  detail::paint_background(out.image, scene, rng);

  const int want = rng.randint(params.min_objects, params.max_objects);
  std::vector<OBB> placed;
  const double scale = n / 128.0;
  for (int attempt = 0; attempt < 200 && static_cast<int>(placed.size()) < want; ++attempt) {
    const Point c{rng.uniform(0.1, 0.9) * n, rng.uniform(0.1, 0.9) * n};
    const bool water = scene.water_at(c);
    int cls;
    double long_side, aspect;
    if (!water && rng.uniform() < 0.4) {
      cls = kSyntheticPlane;
      long_side = rng.uniform(16, 30);
      aspect = rng.uniform(1.0, 1.5);
    } else {
      cls = water ? kSyntheticShip : kSyntheticVehicle;
      long_side = rng.uniform(14, 32);
      aspect = rng.uniform(1.8, 3.2);
    }
    OBB box;
    box.cx = c.x;
    box.cy = c.y;
    box.w = long_side * scale;
    box.h = long_side * scale / aspect;
    box.theta = rng.uniform(0, 180);
    box = canonicalize(box);
    const Quad q = obb_to_quad(box);
    bool ok = true;
    for (const Point& p : q.pts) {
      if (p.x < 1 || p.y < 1 || p.x > n - 1 || p.y > n - 1) ok = false;
      // Keep every corner at least 2 px inside its own region.
      const double d = scene.shore_distance(p);
      if (water ? d < 2.0 : d > -2.0) ok = false;
    }
    if (!ok) continue;
    OBB grown = box;
    grown.w += 4;
    grown.h += 4;
    for (const OBB& other : placed) {
      if (iou_obb(grown, other) > 0) ok = false;
    }
    if (!ok) continue;
    placed.push_back(box);
    AnnotatedObject obj;
    obj.shape = q;
    obj.class_id = cls;
    out.objects.push_back(obj);
  }

  static const double kPlane[3] = {232, 228, 220};
  static const double kGray[3] = {150, 150, 154};
  for (std::size_t i = 0; i < placed.size(); ++i) {
    detail::paint_box(out.image, placed[i], out.objects[i].class_id == kSyntheticPlane ? kPlane : kGray, rng);
  }
  return out;
}

}  // namespace cadnet
