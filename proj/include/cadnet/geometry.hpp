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

// Rotated-box arithmetic: quadrilateral / oriented box / horizontal box
// conversions, convex polygon overlap and class-wise greedy NMS.
//
// Conventions: image coordinates in pixels (x right, y down). Orientation
// "counter-clockwise" means a positive shoelace sum in these coordinates.
// OBB angles are degrees in [0, 90); the rectangle is the axis-aligned
// w x h box rotated by theta about its center with the usual 2x2 matrix.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <variant>
#include <vector>

#include "cadnet/error.hpp"

namespace cadnet {

inline constexpr double kAreaEpsilon = 1e-6;
inline constexpr double kDefaultNmsThreshold = 0.5;

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

inline Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
inline Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
inline Point operator*(double s, Point p) { return {s * p.x, s * p.y}; }
inline double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }
inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }

struct Quad {
  std::array<Point, 4> pts{};

  friend bool operator==(const Quad&, const Quad&) = default;
};

struct HBB {
  double xmin = 0.0;
  double ymin = 0.0;
  double xmax = 0.0;
  double ymax = 0.0;

  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  Point center() const { return {0.5 * (xmin + xmax), 0.5 * (ymin + ymax)}; }

  friend bool operator==(const HBB&, const HBB&) = default;
};

struct OBB {
  double cx = 0.0;
  double cy = 0.0;
  double w = 1.0;
  double h = 1.0;
  double theta = 0.0;  // degrees, [0, 90)

  double area() const { return w * h; }
  bool valid() const {
    return std::isfinite(cx) && std::isfinite(cy) && w > 0.0 && h > 0.0 &&
           theta >= 0.0 && theta < 90.0;
  }

  friend bool operator==(const OBB&, const OBB&) = default;
};

enum class BoxKind { kHBB, kOBB };

using Box = std::variant<HBB, OBB>;

inline BoxKind kind_of(const Box& b) {
  return std::holds_alternative<HBB>(b) ? BoxKind::kHBB : BoxKind::kOBB;
}

struct ScoredDetection {
  Box box;
  int class_id = 0;
  double score = 0.0;
};

// ---------------------------------------------------------------------------
// Polygon helpers

template <typename Range>
double signed_area(const Range& poly) {
  const std::size_t n = std::size(poly);
  if (n < 3) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Point& a = poly[i];
    const Point& b = poly[(i + 1) % n];
    s += a.x * b.y - b.x * a.y;
  }
  return 0.5 * s;
}

inline double area(const Quad& q) { return std::abs(signed_area(q.pts)); }

// Andrew's monotone chain; returns the hull counter-clockwise without
// collinear points.
inline std::vector<Point> convex_hull(std::vector<Point> pts) {
  std::sort(pts.begin(), pts.end(), [](Point a, Point b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Point> hull(2 * pts.size());
  std::size_t k = 0;
  for (const Point& p : pts) {
    while (k >= 2 && cross(hull[k - 1] - hull[k - 2], p - hull[k - 2]) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    const Point& p = pts[i];
    while (k >= t && cross(hull[k - 1] - hull[k - 2], p - hull[k - 2]) <= 0) --k;
    hull[k++] = p;
  }
  hull.resize(k - 1);
  return hull;
}

// Clips `subject` against the convex counter-clockwise polygon `clip`.
inline std::vector<Point> clip_convex(std::vector<Point> subject,
                                      std::span<const Point> clip) {
  const std::size_t m = clip.size();
  for (std::size_t e = 0; e < m && !subject.empty(); ++e) {
    const Point a = clip[e];
    const Point b = clip[(e + 1) % m];
    const Point dir = b - a;
    std::vector<Point> out;
    out.reserve(subject.size() + 2);
    const std::size_t n = subject.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Point p = subject[i];
      const Point q = subject[(i + 1) % n];
      const double sp = cross(dir, p - a);
      const double sq = cross(dir, q - a);
      if (sp >= 0) out.push_back(p);
      if ((sp >= 0) != (sq >= 0)) {
        const double t = sp / (sp - sq);
        out.push_back(p + t * (q - p));
      }
    }
    subject = std::move(out);
  }
  return subject;
}

inline std::array<Point, 4> ccw(const Quad& q) {
  std::array<Point, 4> p = q.pts;
  if (signed_area(p) < 0) std::reverse(p.begin(), p.end());
  return p;
}

// ---------------------------------------------------------------------------
// Conversions

inline Quad obb_to_quad(const OBB& b) {
  const double rad = b.theta * std::numbers::pi / 180.0;
  const double c = std::cos(rad);
  const double s = std::sin(rad);
  const double hw = 0.5 * b.w;
  const double hh = 0.5 * b.h;
  const std::array<Point, 4> local{{{-hw, -hh}, {hw, -hh}, {hw, hh}, {-hw, hh}}};
  Quad q;
  for (std::size_t i = 0; i < 4; ++i) {
    q.pts[i] = {b.cx + c * local[i].x - s * local[i].y,
                b.cy + s * local[i].x + c * local[i].y};
  }
  return q;
}

// Maps (w, h, theta) with arbitrary theta onto the canonical half-open range
// [0, 90), swapping sides for every odd quarter turn.
inline OBB canonicalize(OBB b) {
  double t = std::fmod(b.theta, 180.0);
  if (t < 0) t += 180.0;
  if (t >= 90.0) {
    t -= 90.0;
    std::swap(b.w, b.h);
  }
  // Values a hair below 90 are the same rectangle as theta = 0 with sides
  // swapped; keep the interval half-open.
  if (t >= 90.0 - 1e-9) {
    t = 0.0;
    std::swap(b.w, b.h);
  }
  b.theta = t;
  return b;
}

// Minimum-area enclosing rectangle of the quad's convex hull (rotating
// calipers over hull edges).
inline OBB quad_to_obb(const Quad& q) {
  for (const Point& p : q.pts) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
      throw DegenerateQuadError("quad has non-finite coordinates");
    }
  }
  const std::vector<Point> hull = convex_hull({q.pts.begin(), q.pts.end()});
  if (hull.size() < 3 || signed_area(hull) <= kAreaEpsilon) {
    throw DegenerateQuadError("quad area below epsilon");
  }
  double best_area = std::numeric_limits<double>::infinity();
  OBB best;
  const std::size_t n = hull.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point e = hull[(i + 1) % n] - hull[i];
    const double len = std::hypot(e.x, e.y);
    if (len <= 0) continue;
    const Point u{e.x / len, e.y / len};
    const Point v{-u.y, u.x};
    double umin = std::numeric_limits<double>::infinity(), umax = -umin;
    double vmin = umin, vmax = -umin;
    for (const Point& p : hull) {
      const double pu = dot(p, u);
      const double pv = dot(p, v);
      umin = std::min(umin, pu);
      umax = std::max(umax, pu);
      vmin = std::min(vmin, pv);
      vmax = std::max(vmax, pv);
    }
    const double a = (umax - umin) * (vmax - vmin);
    if (a < best_area) {
      best_area = a;
      const double mu = 0.5 * (umin + umax);
      const double mv = 0.5 * (vmin + vmax);
      best.cx = mu * u.x + mv * v.x;
      best.cy = mu * u.y + mv * v.y;
      best.w = umax - umin;
      best.h = vmax - vmin;
      best.theta = std::atan2(u.y, u.x) * 180.0 / std::numbers::pi;
    }
  }
  return canonicalize(best);
}

inline HBB quad_to_hbb(const Quad& q) {
  HBB h{q.pts[0].x, q.pts[0].y, q.pts[0].x, q.pts[0].y};
  for (const Point& p : q.pts) {
    h.xmin = std::min(h.xmin, p.x);
    h.ymin = std::min(h.ymin, p.y);
    h.xmax = std::max(h.xmax, p.x);
    h.ymax = std::max(h.ymax, p.y);
  }
  return h;
}

inline HBB obb_to_hbb(const OBB& b) { return quad_to_hbb(obb_to_quad(b)); }

inline Quad hbb_to_quad(const HBB& h) {
  return Quad{{{{h.xmin, h.ymin}, {h.xmax, h.ymin}, {h.xmax, h.ymax}, {h.xmin, h.ymax}}}};
}

inline OBB hbb_to_obb(const HBB& h) {
  return canonicalize({0.5 * (h.xmin + h.xmax), 0.5 * (h.ymin + h.ymax),
                       h.width(), h.height(), 0.0});
}

inline HBB to_hbb(const Box& b) {
  return std::visit(
      [](const auto& v) -> HBB {
        if constexpr (std::is_same_v<std::decay_t<decltype(v)>, HBB>) {
          return v;
        } else {
          return obb_to_hbb(v);
        }
      },
      b);
}

// ---------------------------------------------------------------------------
// Overlap

namespace detail {
inline bool quad_less(const Quad& a, const Quad& b) {
  for (std::size_t i = 0; i < 4; ++i) {
    if (a.pts[i].x != b.pts[i].x) return a.pts[i].x < b.pts[i].x;
    if (a.pts[i].y != b.pts[i].y) return a.pts[i].y < b.pts[i].y;
  }
  return false;
}
}  // namespace detail

// Area of the overlap of two convex quads. Argument order does not affect
// the result bit-wise.
inline double polygon_intersection_area(const Quad& a, const Quad& b) {
  const bool swap = detail::quad_less(b, a);
  const auto pa = ccw(swap ? b : a);
  const auto pb = ccw(swap ? a : b);
  if (std::abs(signed_area(pa)) <= 0.0 || std::abs(signed_area(pb)) <= 0.0) {
    return 0.0;
  }
  const auto clipped = clip_convex({pa.begin(), pa.end()}, pb);
  if (clipped.size() < 3) return 0.0;
  return std::abs(signed_area(clipped));
}

inline double iou_hbb(const HBB& a, const HBB& b) {
  const double iw = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
  const double ih = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

inline double iou_quad(const Quad& a, const Quad& b) {
  const HBB ha = quad_to_hbb(a);
  const HBB hb = quad_to_hbb(b);
  if (ha.xmin >= hb.xmax || hb.xmin >= ha.xmax || ha.ymin >= hb.ymax ||
      hb.ymin >= ha.ymax) {
    return 0.0;
  }
  const double inter = polygon_intersection_area(a, b);
  const double uni = area(a) + area(b) - inter;
  return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

inline double iou_obb(const OBB& a, const OBB& b) {
  const double inter = [&] {
    const Quad qa = obb_to_quad(a);
    const Quad qb = obb_to_quad(b);
    const HBB ha = quad_to_hbb(qa);
    const HBB hb = quad_to_hbb(qb);
    if (ha.xmin >= hb.xmax || hb.xmin >= ha.xmax || ha.ymin >= hb.ymax ||
        hb.ymin >= ha.ymax) {
      return 0.0;
    }
    return polygon_intersection_area(qa, qb);
  }();
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

inline double iou(const Box& a, const Box& b) {
  if (a.index() != b.index()) {
    throw BoxKindError("IoU between an HBB and an OBB is not defined");
  }
  if (const auto* ha = std::get_if<HBB>(&a)) return iou_hbb(*ha, std::get<HBB>(b));
  return iou_obb(std::get<OBB>(a), std::get<OBB>(b));
}

// Indices sorted by descending score, ties by lower index.
inline std::vector<std::size_t> score_order(std::span<const ScoredDetection> dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });
  return order;
}

// Greedy class-wise NMS. Returns kept indices in score-rank order.
inline std::vector<std::size_t> rotated_nms(std::span<const ScoredDetection> dets,
                                            double iou_threshold) {
  if (dets.empty()) return {};
  const auto kind = dets.front().box.index();
  for (const auto& d : dets) {
    if (d.box.index() != kind) throw BoxKindError("NMS over mixed box kinds");
  }
  const auto order = score_order(dets);
  std::vector<std::size_t> keep;
  for (std::size_t i : order) {
    bool suppressed = false;
    for (std::size_t k : keep) {
      if (dets[k].class_id == dets[i].class_id &&
          iou(dets[k].box, dets[i].box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) keep.push_back(i);
  }
  return keep;
}

// Class-agnostic NMS over plain HBBs (proposal stage).
inline std::vector<std::size_t> nms_hbb(std::span<const HBB> boxes,
                                        std::span<const double> scores,
                                        double iou_threshold,
                                        std::size_t max_keep) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> keep;
  std::vector<char> dead(boxes.size(), 0);
  for (std::size_t oi = 0; oi < order.size() && keep.size() < max_keep; ++oi) {
    const std::size_t i = order[oi];
    if (dead[i]) continue;
    keep.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!dead[j] && iou_hbb(boxes[i], boxes[j]) > iou_threshold) dead[j] = 1;
    }
  }
  return keep;
}

}  // namespace cadnet
