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

// Reference implementations used only by the tests. They deliberately take
// different routes from the library code they check.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "cadnet/geometry.hpp"
#include "cadnet/random.hpp"

namespace oracle {

using cadnet::HBB;
using cadnet::OBB;
using cadnet::Point;
using cadnet::Quad;

inline bool inside_obb(const OBB& b, double x, double y) {
  const double t = b.theta * std::numbers::pi / 180.0;
  const double dx = x - b.cx, dy = y - b.cy;
  const double u = std::cos(t) * dx + std::sin(t) * dy;
  const double v = -std::sin(t) * dx + std::cos(t) * dy;
  return std::abs(u) <= b.w / 2 && std::abs(v) <= b.h / 2;
}

// IoU by point sampling on an n x n grid over the joint bounding box.
inline double raster_iou(const OBB& a, const OBB& b, int n = 512) {
  const HBB ha = cadnet::obb_to_hbb(a), hb = cadnet::obb_to_hbb(b);
  const double x0 = std::min(ha.xmin, hb.xmin), x1 = std::max(ha.xmax, hb.xmax);
  const double y0 = std::min(ha.ymin, hb.ymin), y1 = std::max(ha.ymax, hb.ymax);
  const double sx = (x1 - x0) / n, sy = (y1 - y0) / n;
  long both = 0, either = 0;
  for (int j = 0; j < n; ++j) {
    const double y = y0 + (j + 0.5) * sy;
    for (int i = 0; i < n; ++i) {
      const double x = x0 + (i + 0.5) * sx;
      const bool ia = inside_obb(a, x, y), ib = inside_obb(b, x, y);
      both += ia && ib;
      either += ia || ib;
    }
  }
  return either ? static_cast<double>(both) / static_cast<double>(either) : 0.0;
}

inline double raster_intersection(const Quad& a, const Quad& b, int n = 512) {
  auto inside = [](const Quad& q, double x, double y) {
    // Winding-agnostic convex test: all edge cross products share a sign.
    int pos = 0, neg = 0;
    for (int i = 0; i < 4; ++i) {
      const Point p = q.pts[i], r = q.pts[(i + 1) % 4];
      const double c = (r.x - p.x) * (y - p.y) - (r.y - p.y) * (x - p.x);
      pos += c > 0;
      neg += c < 0;
    }
    return pos == 0 || neg == 0;
  };
  double x0 = 1e18, x1 = -1e18, y0 = 1e18, y1 = -1e18;
  for (const Quad* q : {&a, &b}) {
    for (const Point& p : q->pts) {
      x0 = std::min(x0, p.x), x1 = std::max(x1, p.x), y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
    }
  }
  const double sx = (x1 - x0) / n, sy = (y1 - y0) / n;
  long both = 0;
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      const double x = x0 + (i + 0.5) * sx, y = y0 + (j + 0.5) * sy;
      both += inside(a, x, y) && inside(b, x, y);
    }
  }
  return static_cast<double>(both) * sx * sy;
}

// Convex intersection as the hull of (vertices of one inside the other) and
// (pairwise edge crossings); area by the shoelace formula.
inline double convex_intersection_area(const Quad& a, const Quad& b) {
  auto contains = [](const Quad& q, Point p) {
    int pos = 0, neg = 0;
    for (int i = 0; i < 4; ++i) {
      const Point s = q.pts[i], e = q.pts[(i + 1) % 4];
      const double c = (e.x - s.x) * (p.y - s.y) - (e.y - s.y) * (p.x - s.x);
      pos += c > 1e-12;
      neg += c < -1e-12;
    }
    return pos == 0 || neg == 0;
  };
  std::vector<Point> pts;
  for (const Point& p : a.pts) {
    if (contains(b, p)) pts.push_back(p);
  }
  for (const Point& p : b.pts) {
    if (contains(a, p)) pts.push_back(p);
  }
  for (int i = 0; i < 4; ++i) {
    const Point p = a.pts[i], r = a.pts[(i + 1) % 4] - p;
    for (int j = 0; j < 4; ++j) {
      const Point q = b.pts[j], s = b.pts[(j + 1) % 4] - q;
      const double den = r.x * s.y - r.y * s.x;
      if (std::abs(den) < 1e-15) continue;
      const Point qp = q - p;
      const double t = (qp.x * s.y - qp.y * s.x) / den, u = (qp.x * r.y - qp.y * r.x) / den;
      if (t >= 0 && t <= 1 && u >= 0 && u <= 1) pts.push_back(p + t * r);
    }
  }
  if (pts.size() < 3) return 0.0;
  Point c{};
  for (const Point& p : pts) c = c + p;
  c = (1.0 / static_cast<double>(pts.size())) * c;
  std::sort(pts.begin(), pts.end(), [&](Point u, Point v) {
    return std::atan2(u.y - c.y, u.x - c.x) < std::atan2(v.y - c.y, v.x - c.x);
  });
  double s = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) s += cadnet::cross(pts[i], pts[(i + 1) % pts.size()]);
  return std::abs(s) / 2;
}

inline double obb_iou(const OBB& a, const OBB& b) {
  const double inter = convex_intersection_area(cadnet::obb_to_quad(a), cadnet::obb_to_quad(b));
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// Exhaustive greedy NMS: rank by (score desc, index asc); each detection is
// checked against every earlier-ranked survivor of its class.
inline std::vector<std::size_t> brute_nms(const std::vector<cadnet::ScoredDetection>& d, double thr) {
  const std::size_t n = d.size();
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t r = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (d[j].score > d[i].score || (d[j].score == d[i].score && j < i)) ++r;
    }
    rank[r] = i;
  }
  std::vector<char> alive(n, 0);
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = rank[r];
    bool keep = true;
    for (std::size_t s = 0; s < r; ++s) {
      const std::size_t j = rank[s];
      if (alive[j] && d[j].class_id == d[i].class_id &&
          obb_iou(std::get<OBB>(d[i].box), std::get<OBB>(d[j].box)) > thr) {
        keep = false;
      }
    }
    alive[i] = keep;
    if (keep) out.push_back(i);
  }
  return out;
}

// Smallest axis-aligned box area of the points rotated by each angle in
// [0, 90) degrees at the given step.
inline double sweep_min_rect_area(const std::vector<Point>& pts, double step_deg = 0.1) {
  double best = 1e300;
  for (double a = 0; a < 90.0; a += step_deg) {
    const double t = a * std::numbers::pi / 180.0, c = std::cos(t), s = std::sin(t);
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const Point& p : pts) {
      const double u = c * p.x + s * p.y, v = -s * p.x + c * p.y;
      x0 = std::min(x0, u), x1 = std::max(x1, u), y0 = std::min(y0, v), y1 = std::max(y1, v);
    }
    best = std::min(best, (x1 - x0) * (y1 - y0));
  }
  return best;
}

// Minimum over rectangles aligned with the direction of every point pair
// (a superset of the hull edges).
inline double pairwise_aligned_min_rect_area(const std::vector<Point>& pts) {
  double best = 1e300;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (i == j) continue;
      const Point e = pts[j] - pts[i];
      const double len = std::hypot(e.x, e.y);
      if (len < 1e-12) continue;
      const Point u{e.x / len, e.y / len}, v{-u.y, u.x};
      double a0 = 1e300, a1 = -1e300, b0 = 1e300, b1 = -1e300;
      for (const Point& p : pts) {
        a0 = std::min(a0, cadnet::dot(u, p)), a1 = std::max(a1, cadnet::dot(u, p));
        b0 = std::min(b0, cadnet::dot(v, p)), b1 = std::max(b1, cadnet::dot(v, p));
      }
      best = std::min(best, (a1 - a0) * (b1 - b0));
    }
  }
  return best;
}

// Corners of b by complex multiplication of the axis-aligned corner offsets
// with e^{i theta}.
inline std::array<Point, 4> rotated_corners(const OBB& b) {
  const std::complex<double> rot = std::polar(1.0, b.theta * std::numbers::pi / 180.0);
  const std::array<std::complex<double>, 4> local{
      {{-b.w / 2, -b.h / 2}, {b.w / 2, -b.h / 2}, {b.w / 2, b.h / 2}, {-b.w / 2, b.h / 2}}};
  std::array<Point, 4> out;
  for (int i = 0; i < 4; ++i) {
    const auto z = std::complex<double>(b.cx, b.cy) + rot * local[i];
    out[i] = {z.real(), z.imag()};
  }
  return out;
}

inline OBB random_obb(cadnet::Rng& rng, double extent = 100.0) {
  OBB b;
  b.cx = rng.uniform(0, extent);
  b.cy = rng.uniform(0, extent);
  b.w = rng.uniform(2, extent / 3);
  b.h = rng.uniform(2, extent / 3);
  b.theta = rng.uniform(0, 90);
  return b;
}

}  // namespace oracle
