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

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cadnet/error.hpp"

namespace cadnet {

// 8-bit interleaved RGB raster, row-major (height x width x 3).
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  Image() = default;
  Image(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t& at(int x, int y, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  std::uint8_t at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool empty() const { return data.empty(); }
};

struct ChannelStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};
};

// Per-channel (value - mean) / std, returned channel-major (3 x H x W).
inline std::vector<float> normalize_contrast(const Image& img, const ChannelStats& stats) {
  for (double s : stats.std) {
    if (!(s > 0.0)) throw Error("channel std must be strictly positive");
  }
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  std::vector<float> out(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      out[c * plane + i] = static_cast<float>(
          (static_cast<double>(img.data[i * 3 + c]) - stats.mean[c]) / stats.std[c]);
    }
  }
  return out;
}

// Accumulates channel statistics over many images.
class ChannelStatsAccumulator {
 public:
  void add(const Image& img) {
    const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
    for (std::size_t i = 0; i < plane; ++i) {
      for (int c = 0; c < 3; ++c) {
        const double v = img.data[i * 3 + c];
        sum_[c] += v;
        sq_[c] += v * v;
      }
    }
    count_ += static_cast<double>(plane);
  }

  ChannelStats finish() const {
    ChannelStats s;
    if (count_ == 0) return s;
    for (int c = 0; c < 3; ++c) {
      s.mean[c] = sum_[c] / count_;
      const double var = sq_[c] / count_ - s.mean[c] * s.mean[c];
      s.std[c] = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
    return s;
  }

 private:
  std::array<double, 3> sum_{}, sq_{};
  double count_ = 0;
};

}  // namespace cadnet
