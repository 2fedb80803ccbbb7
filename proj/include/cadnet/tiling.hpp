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

// Overlapping crop planning for large images, patch extraction with
// annotation remapping, and stitching of per-patch detections.

#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cadnet/error.hpp"
#include "cadnet/geometry.hpp"
#include "cadnet/image.hpp"
#include "cadnet/ingest.hpp"

namespace cadnet {

struct TileWindow {
  int x = 0;
  int y = 0;
  int width = 0;   // == tile size
  int height = 0;  // == tile size
  int pad_right = 0;
  int pad_bottom = 0;

  int valid_width() const { return width - pad_right; }
  int valid_height() const { return height - pad_bottom; }

  friend bool operator==(const TileWindow&, const TileWindow&) = default;
};

struct TilePlan {
  int image_width = 0;
  int image_height = 0;
  int tile = 0;
  int overlap = 0;
  std::vector<TileWindow> windows;  // row-major

  int stride() const { return tile - overlap; }
};

namespace detail {

// Offsets along one axis: multiples of the stride, with the final window
// clamped flush to the far edge. Uses the fewest windows that still cover
// the axis under that rule.
inline std::vector<int> axis_offsets(int length, int tile, int stride) {
  if (length <= tile) return {0};
  const double gap = static_cast<double>(length - 2 * tile) / stride;
  const int n = std::max(2, static_cast<int>(std::ceil(gap)) + 2);
  std::vector<int> out;
  for (int k = 0; k < n - 1; ++k) out.push_back(k * stride);
  out.push_back(length - tile);
  return out;
}

}  // namespace detail

inline TilePlan plan_tiles(int width, int height, int tile, int overlap) {
  if (width < 1 || height < 1) throw Error("image size must be positive");
  if (overlap < 0) throw Error("overlap must be non-negative");
  if (tile <= overlap) throw Error("tile size must exceed overlap");
  TilePlan plan{width, height, tile, overlap, {}};
  const int stride = tile - overlap;
  const auto xs = detail::axis_offsets(width, tile, stride);
  const auto ys = detail::axis_offsets(height, tile, stride);
  for (int y : ys) {
    for (int x : xs) {
      plan.windows.push_back({x, y, tile, tile, std::max(0, x + tile - width),
                              std::max(0, y + tile - height)});
    }
  }
  return plan;
}

struct PatchSample {
  Image pixels;
  TileWindow window;
  std::vector<AnnotatedObject> annotations;
};

inline Shape translate_and_clip(const Shape& s, double dx, double dy, double limit) {
  auto clampv = [limit](double v) { return std::clamp(v, 0.0, limit); };
  if (const auto* q = std::get_if<Quad>(&s)) {
    Quad out;
    for (std::size_t i = 0; i < 4; ++i) {
      out.pts[i] = {clampv(q->pts[i].x - dx), clampv(q->pts[i].y - dy)};
    }
    return out;
  }
  const HBB& h = std::get<HBB>(s);
  return HBB{clampv(h.xmin - dx), clampv(h.ymin - dy), clampv(h.xmax - dx), clampv(h.ymax - dy)};
}

// Copies the window (zero-filled outside the image) and keeps annotations
// whose center falls in the unpadded part of the window. Objects that clip
// down to zero area are dropped.
inline PatchSample crop_patch(const Image& image, const TileWindow& window,
                              const std::vector<AnnotatedObject>& annotations) {
  PatchSample out;
  out.window = window;
  out.pixels = Image(window.width, window.height);
  const int w = std::min(window.width, image.width - window.x);
  const int h = std::min(window.height, image.height - window.y);
  for (int y = 0; y < h; ++y) {
    const auto* src = &image.data[(static_cast<std::size_t>(window.y + y) * image.width + window.x) * 3];
    auto* dst = &out.pixels.data[static_cast<std::size_t>(y) * window.width * 3];
    std::copy(src, src + static_cast<std::size_t>(w) * 3, dst);
  }
  const double x0 = window.x, y0 = window.y;
  for (const auto& obj : annotations) {
    const Point c = shape_center(obj.shape);
    if (c.x < x0 || c.x >= x0 + w || c.y < y0 || c.y >= y0 + h) continue;
    AnnotatedObject moved = obj;
    moved.shape = translate_and_clip(obj.shape, x0, y0, window.width);
    const bool degenerate = std::visit(
        [](const auto& v) {
          if constexpr (std::is_same_v<std::decay_t<decltype(v)>, Quad>) {
            return std::abs(signed_area(convex_hull({v.pts.begin(), v.pts.end()}))) <= kAreaEpsilon;
          } else {
            return v.area() <= kAreaEpsilon;
          }
        },
        moved.shape);
    if (!degenerate) out.annotations.push_back(moved);
  }
  return out;
}

inline Box translate(const Box& b, double dx, double dy) {
  if (const auto* h = std::get_if<HBB>(&b)) {
    return HBB{h->xmin + dx, h->ymin + dy, h->xmax + dx, h->ymax + dy};
  }
  OBB o = std::get<OBB>(b);
  o.cx += dx;
  o.cy += dy;
  return o;
}

struct PatchDetections {
  TileWindow window;
  std::vector<ScoredDetection> detections;  // patch coordinates
};

// Moves detections into image coordinates, drops those lying entirely in
// padding, and removes cross-patch duplicates with class-wise NMS.
inline std::vector<ScoredDetection> stitch_detections(const std::vector<PatchDetections>& per_patch,
                                                      double iou_threshold) {
  std::vector<ScoredDetection> all;
  for (const auto& p : per_patch) {
    for (const auto& d : p.detections) {
      const HBB h = to_hbb(d.box);
      if (h.xmin >= p.window.valid_width() || h.ymin >= p.window.valid_height()) continue;
      all.push_back({translate(d.box, p.window.x, p.window.y), d.class_id, d.score});
    }
  }
  const auto keep = rotated_nms(all, iou_threshold);
  std::vector<ScoredDetection> out;
  out.reserve(keep.size());
  for (auto i : keep) out.push_back(all[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Patch manifest: one JSON object per line.

struct ManifestRow {
  std::string image_id;
  std::string patch;  // file stem of the written patch
  TileWindow window;
};

inline void write_manifest(std::ostream& os, const std::vector<ManifestRow>& rows) {
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["image"] = r.image_id;
    j["patch"] = r.patch;
    j["x"] = r.window.x;
    j["y"] = r.window.y;
    j["tile"] = r.window.width;
    j["pad_right"] = r.window.pad_right;
    j["pad_bottom"] = r.window.pad_bottom;
    os << j.dump() << '\n';
  }
}

inline std::vector<ManifestRow> read_manifest(std::istream& is) {
  std::vector<ManifestRow> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestRow r;
      r.image_id = j.at("image").get<std::string>();
      r.patch = j.at("patch").get<std::string>();
      const int t = j.at("tile").get<int>();
      r.window = {j.at("x").get<int>(), j.at("y").get<int>(), t, t,
                  j.at("pad_right").get<int>(), j.at("pad_bottom").get<int>()};
      rows.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("manifest: ") + e.what(), line_no);
    }
  }
  return rows;
}

}  // namespace cadnet
