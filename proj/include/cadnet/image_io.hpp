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

// Image files and figures through OpenCV. Only this header and the
// pipeline depend on OpenCV; the core library does not.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cadnet/error.hpp"
#include "cadnet/geometry.hpp"
#include "cadnet/image.hpp"
#include "cadnet/tensor.hpp"

namespace cadnet {

inline Image from_mat(const cv::Mat& bgr) {
  Image img(bgr.cols, bgr.rows);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      img.at(x, y, 0) = row[x][2];
      img.at(x, y, 1) = row[x][1];
      img.at(x, y, 2) = row[x][0];
    }
  }
  return img;
}

inline cv::Mat to_mat(const Image& img) {
  cv::Mat m(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width; ++x) {
      row[x] = cv::Vec3b(img.at(x, y, 2), img.at(x, y, 1), img.at(x, y, 0));
    }
  }
  return m;
}

inline Image read_image(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (m.empty()) throw Error("unreadable image: " + path.string());
  return from_mat(m);
}

inline void write_image(const std::filesystem::path& path, const Image& img) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), to_mat(img))) throw Error("cannot write image: " + path.string());
}

// (width, height), or (0, 0) when unreadable.
inline std::pair<int, int> probe_image_size(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) return {0, 0};
  return {m.cols, m.rows};
}

// RGB per class id, cycling for large vocabularies.
inline std::array<std::uint8_t, 3> class_color(int class_id) {
  static const std::array<std::array<std::uint8_t, 3>, 10> kPalette{{{230, 25, 75},
                                                                     {60, 180, 75},
                                                                     {255, 225, 25},
                                                                     {0, 130, 200},
                                                                     {245, 130, 48},
                                                                     {145, 30, 180},
                                                                     {70, 240, 240},
                                                                     {240, 50, 230},
                                                                     {210, 245, 60},
                                                                     {250, 190, 190}}};
  return kPalette[static_cast<std::size_t>(class_id) % kPalette.size()];
}

namespace detail {

inline void dashed_line(cv::Mat& m, cv::Point2d a, cv::Point2d b, const cv::Scalar& color) {
  const double len = std::hypot(b.x - a.x, b.y - a.y);
  const double dash = 4.0, gap = 3.0;
  for (double t = 0; t < len; t += dash + gap) {
    const double t1 = std::min(len, t + dash);
    const cv::Point2d p = a + (b - a) * (t / len), q = a + (b - a) * (t1 / len);
    cv::line(m, cv::Point(static_cast<int>(std::lround(p.x)), static_cast<int>(std::lround(p.y))),
             cv::Point(static_cast<int>(std::lround(q.x)), static_cast<int>(std::lround(q.y))), color, 1,
             cv::LINE_8);
  }
}

}  // namespace detail

// Dashed class-coloured outlines with a solid marker on every vertex.
inline Image draw_detections(const Image& img, const std::vector<ScoredDetection>& dets) {
  cv::Mat m = to_mat(img);
  for (const auto& d : dets) {
    const auto rgb = class_color(d.class_id);
    const cv::Scalar color(rgb[2], rgb[1], rgb[0]);
    const Quad q = std::holds_alternative<OBB>(d.box) ? obb_to_quad(std::get<OBB>(d.box))
                                                      : hbb_to_quad(std::get<HBB>(d.box));
    for (int i = 0; i < 4; ++i) {
      const Point a = q.pts[i], b = q.pts[(i + 1) % 4];
      detail::dashed_line(m, {a.x, a.y}, {b.x, b.y}, color);
    }
    for (const Point& p : q.pts) {
      cv::circle(m, cv::Point(static_cast<int>(std::lround(p.x)), static_cast<int>(std::lround(p.y))), 1, color,
                 cv::FILLED);
    }
  }
  return from_mat(m);
}

// Gray heatmap of a 1 x H x W map in [0, 1], upscaled (nearest) to
// width x height. Value v maps to round(255 v).
template <typename T>
Image render_heatmap(const nn::Tensor<T>& map, int width, int height) {
  if (map.rank() != 3 || map.dim(0) != 1) throw ShapeError("heatmap expects a 1 x H x W tensor");
  const int h = map.dim(1), w = map.dim(2);
  Image img(width, height);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(h - 1, y * h / height);
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(w - 1, x * w / width);
      const double v = std::clamp(static_cast<double>(map.at(0, sy, sx)), 0.0, 1.0);
      const auto g = static_cast<std::uint8_t>(std::lround(255.0 * v));
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = g;
    }
  }
  return img;
}

}  // namespace cadnet
