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

// Anchor generation, box delta coding and target assignment.
//
// HBB deltas (tx, ty, tw, th): center offsets normalised by the reference
// size, sizes in log space. OBB deltas add dtheta = theta / 90 against an
// axis-aligned reference.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "cadnet/error.hpp"
#include "cadnet/geometry.hpp"
#include "cadnet/ingest.hpp"
#include "cadnet/random.hpp"

namespace cadnet {

using HbbDeltas = std::array<double, 4>;
using ObbDeltas = std::array<double, 5>;

// Largest log-space size delta applied when decoding (about 1000/16).
inline const double kMaxLogDelta = std::log(1000.0 / 16.0);

inline HbbDeltas encode_hbb(const HBB& gt, const HBB& ref) {
  if (!(ref.width() > 0 && ref.height() > 0)) throw Error("encode_hbb: reference must have positive size");
  if (!(gt.width() > 0 && gt.height() > 0)) throw Error("encode_hbb: target must have positive size");
  const Point rc = ref.center(), gc = gt.center();
  return {(gc.x - rc.x) / ref.width(), (gc.y - rc.y) / ref.height(),
          std::log(gt.width() / ref.width()), std::log(gt.height() / ref.height())};
}

inline HBB decode_hbb(const HbbDeltas& d, const HBB& ref) {
  if (!(ref.width() > 0 && ref.height() > 0)) throw Error("decode_hbb: reference must have positive size");
  const Point rc = ref.center();
  const double cx = rc.x + d[0] * ref.width();
  const double cy = rc.y + d[1] * ref.height();
  const double w = ref.width() * std::exp(std::min(d[2], kMaxLogDelta));
  const double h = ref.height() * std::exp(std::min(d[3], kMaxLogDelta));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

// Of the two (w, h, theta) / (h, w, theta - 90) spellings of the target,
// encodes the one with the smaller squared size+angle delta.
inline ObbDeltas encode_obb(const OBB& gt, const HBB& ref) {
  if (!(ref.width() > 0 && ref.height() > 0)) throw Error("encode_obb: reference must have positive size");
  if (!gt.valid()) throw Error("encode_obb: invalid target box");
  const Point rc = ref.center();
  const double dx = (gt.cx - rc.x) / ref.width();
  const double dy = (gt.cy - rc.y) / ref.height();
  auto make = [&](double w, double h, double theta) {
    return ObbDeltas{dx, dy, std::log(w / ref.width()), std::log(h / ref.height()), theta / 90.0};
  };
  const ObbDeltas a = make(gt.w, gt.h, gt.theta);
  const ObbDeltas b = make(gt.h, gt.w, gt.theta - 90.0);
  auto mag = [](const ObbDeltas& d) { return d[2] * d[2] + d[3] * d[3] + d[4] * d[4]; };
  return mag(b) < mag(a) ? b : a;
}

inline OBB decode_obb(const ObbDeltas& d, const HBB& ref) {
  if (!(ref.width() > 0 && ref.height() > 0)) throw Error("decode_obb: reference must have positive size");
  const Point rc = ref.center();
  OBB o;
  o.cx = rc.x + d[0] * ref.width();
  o.cy = rc.y + d[1] * ref.height();
  o.w = ref.width() * std::exp(std::min(d[2], kMaxLogDelta));
  o.h = ref.height() * std::exp(std::min(d[3], kMaxLogDelta));
  o.theta = 90.0 * d[4];
  return canonicalize(o);
}

// ---------------------------------------------------------------------------
// Anchors

struct AnchorConfig {
  std::vector<double> sizes{32, 64, 128, 256};  // one per level P2..P5
  std::vector<double> ratios{0.5, 1.0, 2.0};    // height / width

  int per_cell() const { return static_cast<int>(ratios.size()); }
};

struct AnchorSet {
  std::vector<HBB> anchors;            // level-major, then (y, x, a)
  std::vector<int> level_begin;        // offset of each level, plus end
  std::vector<int> strides;
  int per_cell = 0;
};

// `grid` holds (height, width) of each pyramid level.
inline AnchorSet make_anchors(const AnchorConfig& cfg, std::span<const std::pair<int, int>> grid,
                              std::span<const int> strides) {
  if (cfg.sizes.size() != grid.size()) throw Error("anchor sizes must match pyramid levels");
  AnchorSet set;
  set.per_cell = cfg.per_cell();
  set.strides.assign(strides.begin(), strides.end());
  for (std::size_t l = 0; l < grid.size(); ++l) {
    set.level_begin.push_back(static_cast<int>(set.anchors.size()));
    const auto [h, w] = grid[l];
    const double s = strides[l];
    std::vector<std::pair<double, double>> shapes;
    for (double r : cfg.ratios) {
      const double aw = cfg.sizes[l] / std::sqrt(r);
      shapes.emplace_back(aw, aw * r);
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double cx = (x + 0.5) * s, cy = (y + 0.5) * s;
        for (const auto& [aw, ah] : shapes) {
          set.anchors.push_back({cx - 0.5 * aw, cy - 0.5 * ah, cx + 0.5 * aw, cy + 0.5 * ah});
        }
      }
    }
  }
  set.level_begin.push_back(static_cast<int>(set.anchors.size()));
  return set;
}

// ---------------------------------------------------------------------------
// Assignment

struct GroundTruth {
  HBB hbb;
  std::optional<OBB> obb;
  int class_id = 0;
};

// Training targets from annotations; difficult objects are left out.
inline std::vector<GroundTruth> ground_truth_from(const std::vector<AnnotatedObject>& objects) {
  std::vector<GroundTruth> out;
  for (const auto& o : objects) {
    if (o.difficult) continue;
    GroundTruth g;
    g.class_id = o.class_id;
    if (const auto* q = std::get_if<Quad>(&o.shape)) {
      g.obb = quad_to_obb(*q);
      g.hbb = obb_to_hbb(*g.obb);
    } else {
      g.hbb = std::get<HBB>(o.shape);
    }
    out.push_back(g);
  }
  return out;
}

struct AssignThresholds {
  double positive = 0.5;
  double negative = 0.5;
  bool best_match_positive = true;  // argmax reference of each gt is positive
};

inline constexpr int kIgnore = -1;
inline constexpr int kBackground = 0;

struct TargetAssignment {
  std::vector<int> labels;   // kIgnore, kBackground, or class_id + 1
  std::vector<int> matched;  // gt index for positives, else -1
  std::vector<HbbDeltas> hbb_deltas;
  std::vector<std::optional<ObbDeltas>> obb_deltas;

  std::size_t size() const { return labels.size(); }
  std::size_t num_positive() const {
    return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](int l) { return l > 0; }));
  }
  std::size_t num_negative() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), kBackground));
  }
};

inline TargetAssignment assign_targets(std::span<const HBB> refs, std::span<const GroundTruth> gts,
                                       const AssignThresholds& th) {
  if (th.positive < th.negative) throw Error("positive threshold below negative threshold");
  const std::size_t n = refs.size(), m = gts.size();
  TargetAssignment out;
  out.labels.assign(n, kIgnore);
  out.matched.assign(n, -1);
  out.hbb_deltas.assign(n, HbbDeltas{});
  out.obb_deltas.assign(n, std::nullopt);
  std::vector<double> best(n, 0.0);
  std::vector<int> best_gt(n, -1);
  std::vector<double> gt_best(m, 0.0);
  std::vector<double> ious(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double v = iou_hbb(refs[i], gts[j].hbb);
      ious[i * m + j] = v;
      if (v > best[i]) {
        best[i] = v;
        best_gt[i] = static_cast<int>(j);
      }
      gt_best[j] = std::max(gt_best[j], v);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    bool positive = best_gt[i] >= 0 && best[i] >= th.positive;
    if (!positive && th.best_match_positive) {
      for (std::size_t j = 0; j < m; ++j) {
        if (gt_best[j] > 0 && ious[i * m + j] == gt_best[j]) {
          positive = true;
          break;
        }
      }
    }
    if (positive) {
      const auto& g = gts[static_cast<std::size_t>(best_gt[i])];
      out.labels[i] = g.class_id + 1;
      out.matched[i] = best_gt[i];
      if (refs[i].width() > 0 && refs[i].height() > 0) {
        out.hbb_deltas[i] = encode_hbb(g.hbb, refs[i]);
        if (g.obb) out.obb_deltas[i] = encode_obb(*g.obb, refs[i]);
      }
    } else if (best[i] <= th.negative) {
      out.labels[i] = kBackground;
    }
  }
  return out;
}

// Keeps at most `batch` labelled entries with at most `positive_fraction`
// positives; everything else becomes kIgnore. Returns the kept indices in
// ascending order.
inline std::vector<std::size_t> sample_assignment(TargetAssignment& a, std::size_t batch,
                                                  double positive_fraction, Rng& rng) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.labels[i] > 0) pos.push_back(i);
    else if (a.labels[i] == kBackground) neg.push_back(i);
  }
  const std::size_t max_pos = static_cast<std::size_t>(static_cast<double>(batch) * positive_fraction);
  rng.shuffle(pos);
  if (pos.size() > max_pos) pos.resize(max_pos);
  rng.shuffle(neg);
  const std::size_t max_neg = batch - pos.size();
  if (neg.size() > max_neg) neg.resize(max_neg);
  std::vector<std::size_t> keep(pos);
  keep.insert(keep.end(), neg.begin(), neg.end());
  std::sort(keep.begin(), keep.end());
  std::vector<char> kept(a.size(), 0);
  for (auto i : keep) kept[i] = 1;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!kept[i]) a.labels[i] = kIgnore;
  }
  return keep;
}

}  // namespace cadnet
