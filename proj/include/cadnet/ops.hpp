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

// Differentiable operations over Tensor/Var. Feature maps are single-image
// (C x H x W); region batches are (R x C x h x w); dense rows are (R x N).

#pragma once

#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "cadnet/geometry.hpp"
#include "cadnet/tensor.hpp"

namespace cadnet::nn {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

// ---------------------------------------------------------------------------
// Convolution

namespace detail {

template <typename T>
void im2col(const T* x, int c, int h, int w, int k, int stride, int pad, int ho, int wo, T* col) {
  const std::size_t hw_out = static_cast<std::size_t>(ho) * wo;
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw_out;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* dst = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int c, int h, int w, int k, int stride, int pad, int ho, int wo, T* dx) {
  const std::size_t hw_out = static_cast<std::size_t>(ho) * wo;
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw_out;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* dst = dx + (static_cast<std::size_t>(ci) * h + iy) * w;
          const T* src = row + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// x: C x H x W, weight: O x C x k x k, bias: O (may be null).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  const auto& xs = x->value.shape;
  const auto& ws = weight->value.shape;
  if (xs.size() != 3 || ws.size() != 4 || ws[1] != xs[0] || ws[2] != ws[3]) {
    throw ShapeError("conv2d: input " + shape_string(xs) + " vs weight " + shape_string(ws));
  }
  const int c = xs[0], h = xs[1], w = xs[2];
  const int o = ws[0], k = ws[2];
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (w + 2 * pad - k) / stride + 1;
  if (ho < 1 || wo < 1) throw ShapeError("conv2d: empty output");
  const std::size_t rows = static_cast<std::size_t>(c) * k * k;
  const std::size_t hw = static_cast<std::size_t>(ho) * wo;
  const bool direct = k == 1 && stride == 1 && pad == 0;

  auto col = std::make_shared<Buffer<T>>();
  const T* col_ptr = x->value.data.data();
  if (!direct) {
    col->resize(rows * hw);
    detail::im2col(x->value.data.data(), c, h, w, k, stride, pad, ho, wo, col->data());
    col_ptr = col->data();
  }
  Tensor<T> out({o, ho, wo});
  MapMat<T> out_m(out.data.data(), o, static_cast<Eigen::Index>(hw));
  CMapMat<T> w_m(weight->value.data.data(), o, static_cast<Eigen::Index>(rows));
  CMapMat<T> col_m(col_ptr, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(hw));
  out_m.noalias() = w_m * col_m;
  if (bias) {
    for (int oi = 0; oi < o; ++oi) out_m.row(oi).array() += bias->value.data[oi];
  }
  std::vector<Var<T>> parents{x, weight};
  if (bias) parents.push_back(bias);
  return make_op<T>(std::move(out), std::move(parents),
                    [=](Node<T>& self) {
                      const Var<T>& xin = self.parents[0];
                      const Var<T>& wv = self.parents[1];
                      CMapMat<T> g(self.grad.data.data(), o, static_cast<Eigen::Index>(hw));
                      const T* cp = direct ? xin->value.data.data() : col->data();
                      CMapMat<T> cm(cp, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(hw));
                      if (wv->requires_grad) {
                        MapMat<T> gw(wv->ensure_grad().data.data(), o, static_cast<Eigen::Index>(rows));
                        gw.noalias() += g * cm.transpose();
                      }
                      if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                        auto& gb = self.parents[2]->ensure_grad();
                        for (int oi = 0; oi < o; ++oi) gb.data[oi] += g.row(oi).sum();
                      }
                      if (xin->requires_grad) {
                        CMapMat<T> wm(wv->value.data.data(), o, static_cast<Eigen::Index>(rows));
                        auto& gx = xin->ensure_grad();
                        if (direct) {
                          MapMat<T> gxm(gx.data.data(), static_cast<Eigen::Index>(rows),
                                        static_cast<Eigen::Index>(hw));
                          gxm.noalias() += wm.transpose() * g;
                        } else {
                          RowMat<T> dcol = wm.transpose() * g;
                          detail::col2im(dcol.data(), c, h, w, k, stride, pad, ho, wo, gx.data.data());
                        }
                      }
                    });
}

// ---------------------------------------------------------------------------
// Element-wise

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x->value;
  for (auto& v : out.data) v = v > T(0) ? v : T(0);
  return make_op<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& gx = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < gx.data.size(); ++i) {
      if (self.value.data[i] > T(0)) gx.data[i] += self.grad.data[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = x->value;
  for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
  return make_op<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& gx = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < gx.data.size(); ++i) {
      const T s = self.value.data[i];
      gx.data[i] += self.grad.data[i] * s * (T(1) - s);
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a->value.shape != b->value.shape) {
    throw ShapeError("add: " + shape_string(a->value.shape) + " vs " + shape_string(b->value.shape));
  }
  Tensor<T> out = a->value;
  add_into(out, b->value);
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) add_into(p->ensure_grad(), self.grad);
    }
  });
}

// s: 1 x H x W, p: C x H x W -> s (broadcast over channels) * p.
template <typename T>
Var<T> mul_channel_broadcast(const Var<T>& s, const Var<T>& p) {
  const auto& ps = p->value.shape;
  if (s->value.shape != std::vector<int>{1, ps[1], ps[2]}) {
    throw ShapeError("mul_channel_broadcast: shape mismatch");
  }
  const std::size_t plane = static_cast<std::size_t>(ps[1]) * ps[2];
  Tensor<T> out(ps);
  for (int c = 0; c < ps[0]; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      out.data[c * plane + i] = s->value.data[i] * p->value.data[c * plane + i];
    }
  }
  return make_op<T>(std::move(out), {s, p}, [plane, channels = ps[0]](Node<T>& self) {
    const auto& sv = self.parents[0]->value.data;
    const auto& pv = self.parents[1]->value.data;
    if (self.parents[0]->requires_grad) {
      auto& gs = self.parents[0]->ensure_grad();
      for (int c = 0; c < channels; ++c) {
        for (std::size_t i = 0; i < plane; ++i) gs.data[i] += self.grad.data[c * plane + i] * pv[c * plane + i];
      }
    }
    if (self.parents[1]->requires_grad) {
      auto& gp = self.parents[1]->ensure_grad();
      for (int c = 0; c < channels; ++c) {
        for (std::size_t i = 0; i < plane; ++i) gp.data[c * plane + i] += self.grad.data[c * plane + i] * sv[i];
      }
    }
  });
}

// Nearest-neighbour resize of C x H x W to C x out_h x out_w.
template <typename T>
Var<T> upsample_nearest(const Var<T>& x, int out_h, int out_w) {
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  std::vector<int> ys(out_h), xs(out_w);
  for (int y = 0; y < out_h; ++y) ys[y] = std::min(h - 1, y * h / out_h);
  for (int xx = 0; xx < out_w; ++xx) xs[xx] = std::min(w - 1, xx * w / out_w);
  Tensor<T> out({c, out_h, out_w});
  for (int ci = 0; ci < c; ++ci) {
    for (int y = 0; y < out_h; ++y) {
      for (int xx = 0; xx < out_w; ++xx) out.at(ci, y, xx) = x->value.at(ci, ys[y], xs[xx]);
    }
  }
  return make_op<T>(std::move(out), {x}, [ys, xs, c, out_h, out_w](Node<T>& self) {
    auto& gx = self.parents[0]->ensure_grad();
    for (int ci = 0; ci < c; ++ci) {
      for (int y = 0; y < out_h; ++y) {
        for (int xx = 0; xx < out_w; ++xx) gx.at(ci, ys[y], xs[xx]) += self.grad.at(ci, y, xx);
      }
    }
  });
}

// Mean over the trailing spatial dims: (C,H,W) -> (C) and (R,C,h,w) -> (R,C).
template <typename T>
Var<T> spatial_mean(const Var<T>& x) {
  const auto& s = x->value.shape;
  if (s.size() != 3 && s.size() != 4) throw ShapeError("spatial_mean: rank must be 3 or 4");
  const std::size_t plane = static_cast<std::size_t>(s[s.size() - 2]) * s[s.size() - 1];
  const std::size_t groups = x->value.numel() / plane;
  std::vector<int> os(s.begin(), s.end() - 2);
  Tensor<T> out(os);
  for (std::size_t g = 0; g < groups; ++g) {
    T acc = 0;
    for (std::size_t i = 0; i < plane; ++i) acc += x->value.data[g * plane + i];
    out.data[g] = acc / static_cast<T>(plane);
  }
  return make_op<T>(std::move(out), {x}, [plane, groups](Node<T>& self) {
    auto& gx = self.parents[0]->ensure_grad();
    for (std::size_t g = 0; g < groups; ++g) {
      const T v = self.grad.data[g] / static_cast<T>(plane);
      for (std::size_t i = 0; i < plane; ++i) gx.data[g * plane + i] += v;
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, std::vector<int> shape) {
  if (Tensor<T>::count(shape) != x->value.numel()) throw ShapeError("reshape: size mismatch");
  Tensor<T> out;
  out.shape = std::move(shape);
  out.data = x->value.data;
  return make_op<T>(std::move(out), {x}, [](Node<T>& self) {
    add_into(self.parents[0]->ensure_grad(), self.grad);
  });
}

// ---------------------------------------------------------------------------
// Dense rows

// x: R x In (any rank, flattened after dim 0), weight: Out x In, bias: Out.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const int r = x->value.dim(0);
  const int in = static_cast<int>(x->value.numel() / static_cast<std::size_t>(r));
  const int out_dim = weight->value.dim(0);
  if (weight->value.dim(1) != in) {
    throw ShapeError("linear: input width " + std::to_string(in) + " vs weight " +
                     shape_string(weight->value.shape));
  }
  Tensor<T> out({r, out_dim});
  MapMat<T> om(out.data.data(), r, out_dim);
  CMapMat<T> xm(x->value.data.data(), r, in);
  CMapMat<T> wm(weight->value.data.data(), out_dim, in);
  om.noalias() = xm * wm.transpose();
  if (bias) {
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < out_dim; ++j) om(i, j) += bias->value.data[j];
    }
  }
  std::vector<Var<T>> parents{x, weight};
  if (bias) parents.push_back(bias);
  return make_op<T>(std::move(out), std::move(parents), [r, in, out_dim](Node<T>& self) {
    const auto& xv = self.parents[0];
    const auto& wv = self.parents[1];
    CMapMat<T> g(self.grad.data.data(), r, out_dim);
    if (wv->requires_grad) {
      MapMat<T> gw(wv->ensure_grad().data.data(), out_dim, in);
      CMapMat<T> xm2(xv->value.data.data(), r, in);
      gw.noalias() += g.transpose() * xm2;
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      auto& gb = self.parents[2]->ensure_grad();
      for (int j = 0; j < out_dim; ++j) gb.data[j] += g.col(j).sum();
    }
    if (xv->requires_grad) {
      MapMat<T> gx(xv->ensure_grad().data.data(), r, in);
      CMapMat<T> wm2(wv->value.data.data(), out_dim, in);
      gx.noalias() += g * wm2;
    }
  });
}

// a: R x N, b: 1 x N (or N) -> a + b broadcast over rows.
template <typename T>
Var<T> add_row_broadcast(const Var<T>& a, const Var<T>& b) {
  const int r = a->value.dim(0);
  const std::size_t n = a->value.numel() / static_cast<std::size_t>(r);
  if (b->value.numel() != n) throw ShapeError("add_row_broadcast: width mismatch");
  Tensor<T> out = a->value;
  for (int i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += b->value.data[j];
  }
  return make_op<T>(std::move(out), {a, b}, [r, n](Node<T>& self) {
    if (self.parents[0]->requires_grad) add_into(self.parents[0]->ensure_grad(), self.grad);
    if (self.parents[1]->requires_grad) {
      auto& gb = self.parents[1]->ensure_grad();
      for (int i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < n; ++j) gb.data[j] += self.grad.data[i * n + j];
      }
    }
  });
}

// Concatenates (R x C_i x h x w) blocks along dim 1.
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  const auto& s0 = parts.at(0)->value.shape;
  const int r = s0[0];
  const std::size_t plane = static_cast<std::size_t>(s0[2]) * s0[3];
  std::vector<int> chans;
  int total = 0;
  for (const auto& p : parts) {
    const auto& s = p->value.shape;
    if (s.size() != 4 || s[0] != r || s[2] != s0[2] || s[3] != s0[3]) {
      throw ShapeError("concat_channels: shape mismatch");
    }
    chans.push_back(s[1]);
    total += s[1];
  }
  Tensor<T> out({r, total, s0[2], s0[3]});
  for (int ri = 0; ri < r; ++ri) {
    std::size_t off = static_cast<std::size_t>(ri) * total * plane;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const std::size_t len = static_cast<std::size_t>(chans[k]) * plane;
      const T* src = parts[k]->value.data.data() + static_cast<std::size_t>(ri) * len;
      std::copy(src, src + len, out.data.data() + off);
      off += len;
    }
  }
  return make_op<T>(std::move(out), parts, [r, plane, chans, total](Node<T>& self) {
    for (int ri = 0; ri < r; ++ri) {
      std::size_t off = static_cast<std::size_t>(ri) * total * plane;
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        const std::size_t len = static_cast<std::size_t>(chans[k]) * plane;
        if (self.parents[k]->requires_grad) {
          T* dst = self.parents[k]->ensure_grad().data.data() + static_cast<std::size_t>(ri) * len;
          for (std::size_t i = 0; i < len; ++i) dst[i] += self.grad.data[off + i];
        }
        off += len;
      }
    }
  });
}

// 1x1 convolution applied independently to each region: x R x Cin x h x w.
template <typename T>
Var<T> conv1x1_regions(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const auto& s = x->value.shape;
  const int r = s[0], cin = s[1];
  const int cout = weight->value.dim(0);
  if (weight->value.numel() != static_cast<std::size_t>(cout) * cin) {
    throw ShapeError("conv1x1_regions: weight shape");
  }
  const int plane = s[2] * s[3];
  Tensor<T> out({r, cout, s[2], s[3]});
  CMapMat<T> wm(weight->value.data.data(), cout, cin);
  for (int ri = 0; ri < r; ++ri) {
    CMapMat<T> xm(x->value.data.data() + static_cast<std::size_t>(ri) * cin * plane, cin, plane);
    MapMat<T> om(out.data.data() + static_cast<std::size_t>(ri) * cout * plane, cout, plane);
    om.noalias() = wm * xm;
    if (bias) {
      for (int o = 0; o < cout; ++o) om.row(o).array() += bias->value.data[o];
    }
  }
  std::vector<Var<T>> parents{x, weight};
  if (bias) parents.push_back(bias);
  return make_op<T>(std::move(out), std::move(parents), [r, cin, cout, plane](Node<T>& self) {
    const auto& xv = self.parents[0];
    const auto& wv = self.parents[1];
    CMapMat<T> wm2(wv->value.data.data(), cout, cin);
    for (int ri = 0; ri < r; ++ri) {
      CMapMat<T> g(self.grad.data.data() + static_cast<std::size_t>(ri) * cout * plane, cout, plane);
      if (wv->requires_grad) {
        CMapMat<T> xm(xv->value.data.data() + static_cast<std::size_t>(ri) * cin * plane, cin, plane);
        MapMat<T> gw(wv->ensure_grad().data.data(), cout, cin);
        gw.noalias() += g * xm.transpose();
      }
      if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
        auto& gb = self.parents[2]->ensure_grad();
        for (int o = 0; o < cout; ++o) gb.data[o] += g.row(o).sum();
      }
      if (xv->requires_grad) {
        MapMat<T> gx(xv->ensure_grad().data.data() + static_cast<std::size_t>(ri) * cin * plane, cin, plane);
        gx.noalias() += wm2.transpose() * g;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Region pooling

struct RoiAlignParams {
  int output_size = 7;
  int sampling_ratio = 2;  // samples per bin side
};

namespace detail {

struct BilinearTap {
  std::size_t idx[4];
  double w[4];
  bool valid = false;
};

// Bilinear tap at continuous feature coordinate (y, x) with pixel centers at
// integer positions; samples beyond one cell outside the map contribute 0.
inline BilinearTap bilinear_tap(double y, double x, int h, int w) {
  BilinearTap t;
  if (y < -1.0 || y > h || x < -1.0 || x > w) return t;
  y = std::max(y, 0.0);
  x = std::max(x, 0.0);
  int y0 = static_cast<int>(y), x0 = static_cast<int>(x), y1, x1;
  if (y0 >= h - 1) {
    y0 = y1 = h - 1;
    y = y0;
  } else {
    y1 = y0 + 1;
  }
  if (x0 >= w - 1) {
    x0 = x1 = w - 1;
    x = x0;
  } else {
    x1 = x0 + 1;
  }
  const double ly = y - y0, lx = x - x0, hy = 1.0 - ly, hx = 1.0 - lx;
  t.idx[0] = static_cast<std::size_t>(y0) * w + x0;
  t.idx[1] = static_cast<std::size_t>(y0) * w + x1;
  t.idx[2] = static_cast<std::size_t>(y1) * w + x0;
  t.idx[3] = static_cast<std::size_t>(y1) * w + x1;
  t.w[0] = hy * hx;
  t.w[1] = hy * lx;
  t.w[2] = ly * hx;
  t.w[3] = ly * lx;
  t.valid = true;
  return t;
}

struct RegionTaps {
  int level = 0;
  std::vector<BilinearTap> taps;  // bins * samples
};

}  // namespace detail

// Pools each region from levels[level_of[r]] (C x H_l x W_l, stride
// strides[level]) onto an output_size^2 grid. Region coordinates are image
// pixels; sample positions use the half-pixel (align-corners false) mapping.
template <typename T>
Var<T> roi_align(const std::vector<Var<T>>& levels, std::span<const int> strides,
                 std::span<const HBB> regions, std::span<const int> level_of,
                 const RoiAlignParams& params) {
  const int r = static_cast<int>(regions.size());
  const int c = levels.at(0)->value.dim(0);
  const int os = params.output_size;
  const int sr = params.sampling_ratio;
  auto taps = std::make_shared<std::vector<detail::RegionTaps>>(r);
  for (int ri = 0; ri < r; ++ri) {
    const HBB& b = regions[ri];
    if (!(b.width() > 0 && b.height() > 0)) throw ShapeError("roi_align: degenerate region");
    const int lvl = level_of[ri];
    const auto& fv = levels.at(lvl)->value;
    if (fv.dim(0) != c) throw ShapeError("roi_align: levels differ in channel count");
    const double scale = 1.0 / strides[lvl];
    const double x1 = b.xmin * scale - 0.5, y1 = b.ymin * scale - 0.5;
    const double bw = b.width() * scale / os, bh = b.height() * scale / os;
    auto& rt = (*taps)[ri];
    rt.level = lvl;
    rt.taps.reserve(static_cast<std::size_t>(os) * os * sr * sr);
    for (int py = 0; py < os; ++py) {
      for (int px = 0; px < os; ++px) {
        for (int iy = 0; iy < sr; ++iy) {
          const double y = y1 + py * bh + (iy + 0.5) * bh / sr;
          for (int ix = 0; ix < sr; ++ix) {
            const double x = x1 + px * bw + (ix + 0.5) * bw / sr;
            rt.taps.push_back(detail::bilinear_tap(y, x, fv.dim(1), fv.dim(2)));
          }
        }
      }
    }
  }
  const std::size_t bins = static_cast<std::size_t>(os) * os;
  const std::size_t per_bin = static_cast<std::size_t>(sr) * sr;
  const T inv = T(1) / static_cast<T>(per_bin);
  Tensor<T> out({r, c, os, os});
  for (int ri = 0; ri < r; ++ri) {
    const auto& rt = (*taps)[ri];
    const auto& fv = levels[rt.level]->value;
    const std::size_t plane = static_cast<std::size_t>(fv.dim(1)) * fv.dim(2);
    for (int ci = 0; ci < c; ++ci) {
      const T* f = fv.data.data() + ci * plane;
      T* o = out.data.data() + (static_cast<std::size_t>(ri) * c + ci) * bins;
      for (std::size_t b = 0; b < bins; ++b) {
        T acc = 0;
        for (std::size_t s = 0; s < per_bin; ++s) {
          const auto& t = rt.taps[b * per_bin + s];
          if (!t.valid) continue;
          acc += static_cast<T>(t.w[0]) * f[t.idx[0]] + static_cast<T>(t.w[1]) * f[t.idx[1]] +
                 static_cast<T>(t.w[2]) * f[t.idx[2]] + static_cast<T>(t.w[3]) * f[t.idx[3]];
        }
        o[b] = acc * inv;
      }
    }
  }
  return make_op<T>(std::move(out), levels, [taps, r, c, bins, per_bin, inv](Node<T>& self) {
    for (int ri = 0; ri < r; ++ri) {
      const auto& rt = (*taps)[ri];
      auto& lv = self.parents[rt.level];
      if (!lv->requires_grad) continue;
      auto& g = lv->ensure_grad();
      const std::size_t plane = static_cast<std::size_t>(lv->value.dim(1)) * lv->value.dim(2);
      for (int ci = 0; ci < c; ++ci) {
        T* gf = g.data.data() + ci * plane;
        const T* go = self.grad.data.data() + (static_cast<std::size_t>(ri) * c + ci) * bins;
        for (std::size_t b = 0; b < bins; ++b) {
          const T v = go[b] * inv;
          for (std::size_t s = 0; s < per_bin; ++s) {
            const auto& t = rt.taps[b * per_bin + s];
            if (!t.valid) continue;
            for (int k = 0; k < 4; ++k) gf[t.idx[k]] += static_cast<T>(t.w[k]) * v;
          }
        }
      }
    }
  });
}

// Gathers per-anchor predictions from every level into one (N x per) block.
// Level l holds (A * per) x H x W; anchor order is (y, x, a) within a level.
template <typename T>
Var<T> gather_anchor_outputs(const std::vector<Var<T>>& levels, int anchors_per_cell, int per) {
  std::size_t total = 0;
  for (const auto& l : levels) total += l->value.numel() / per;
  Tensor<T> out({static_cast<int>(total), per});
  std::size_t off = 0;
  for (const auto& l : levels) {
    const int h = l->value.dim(1), w = l->value.dim(2);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int a = 0; a < anchors_per_cell; ++a) {
          const std::size_t n = off + (static_cast<std::size_t>(y) * w + x) * anchors_per_cell + a;
          for (int j = 0; j < per; ++j) out.data[n * per + j] = l->value.at(a * per + j, y, x);
        }
      }
    }
    off += static_cast<std::size_t>(h) * w * anchors_per_cell;
  }
  return make_op<T>(std::move(out), levels, [anchors_per_cell, per](Node<T>& self) {
    std::size_t off2 = 0;
    for (auto& l : self.parents) {
      const int h = l->value.dim(1), w = l->value.dim(2);
      if (l->requires_grad) {
        auto& g = l->ensure_grad();
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            for (int a = 0; a < anchors_per_cell; ++a) {
              const std::size_t n = off2 + (static_cast<std::size_t>(y) * w + x) * anchors_per_cell + a;
              for (int j = 0; j < per; ++j) g.at(a * per + j, y, x) += self.grad.data[n * per + j];
            }
          }
        }
      }
      off2 += static_cast<std::size_t>(h) * w * anchors_per_cell;
    }
  });
}

// ---------------------------------------------------------------------------
// Losses (scalar outputs)

// Mean softmax cross-entropy over the selected rows of logits (R x C);
// labels[k] is the class of rows[k].
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const std::size_t> rows,
                             std::span<const int> labels) {
  const int c = logits->value.dim(1);
  const std::size_t n = rows.size();
  auto probs = std::make_shared<std::vector<T>>(n * static_cast<std::size_t>(c));
  T loss = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const T* z = logits->value.data.data() + rows[k] * static_cast<std::size_t>(c);
    T m = z[0];
    for (int j = 1; j < c; ++j) m = std::max(m, z[j]);
    T sum = 0;
    for (int j = 0; j < c; ++j) sum += std::exp(z[j] - m);
    const T lse = m + std::log(sum);
    for (int j = 0; j < c; ++j) (*probs)[k * c + j] = std::exp(z[j] - lse);
    loss += lse - z[labels[k]];
  }
  Tensor<T> out({1});
  out.data[0] = n ? loss / static_cast<T>(n) : T(0);
  std::vector<std::size_t> rw(rows.begin(), rows.end());
  std::vector<int> lab(labels.begin(), labels.end());
  return make_op<T>(std::move(out), {logits}, [probs, rw, lab, c](Node<T>& self) {
    if (rw.empty()) return;
    auto& g = self.parents[0]->ensure_grad();
    const T s = self.grad.data[0] / static_cast<T>(rw.size());
    for (std::size_t k = 0; k < rw.size(); ++k) {
      for (int j = 0; j < c; ++j) {
        g.data[rw[k] * c + j] += s * ((*probs)[k * c + j] - (j == lab[k] ? T(1) : T(0)));
      }
    }
  });
}

// Mean binary cross-entropy with logits over selected entries of an (N x 1)
// block. labels are 0/1.
template <typename T>
Var<T> binary_cross_entropy(const Var<T>& logits, std::span<const std::size_t> index,
                            std::span<const int> labels) {
  const std::size_t n = index.size();
  T loss = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const T z = logits->value.data[index[k]];
    // log(1 + exp(-|z|)) + max(z, 0) - z*y
    loss += std::log1p(std::exp(-std::abs(z))) + std::max(z, T(0)) - z * static_cast<T>(labels[k]);
  }
  Tensor<T> out({1});
  out.data[0] = n ? loss / static_cast<T>(n) : T(0);
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<int> lab(labels.begin(), labels.end());
  return make_op<T>(std::move(out), {logits}, [idx, lab](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    const T s = self.grad.data[0] / static_cast<T>(std::max<std::size_t>(idx.size(), 1));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const T z = self.parents[0]->value.data[idx[k]];
      const T p = T(1) / (T(1) + std::exp(-z));
      g.data[idx[k]] += s * (p - static_cast<T>(lab[k]));
    }
  });
}

template <typename T>
T smooth_l1_value(T d, T beta) {
  const T a = std::abs(d);
  return a < beta ? T(0.5) * d * d / beta : a - T(0.5) * beta;
}

struct RowTarget {
  std::size_t row = 0;
  std::size_t column = 0;       // first predicted column for this row
  std::vector<double> target;   // one value per predicted column
};

// Smooth-L1 summed over each target's columns, summed over targets and
// divided by `normalizer`.
template <typename T>
Var<T> smooth_l1(const Var<T>& pred, std::vector<RowTarget> targets, T beta, T normalizer) {
  const std::size_t width = pred->value.numel() / static_cast<std::size_t>(pred->value.dim(0));
  T loss = 0;
  for (const auto& t : targets) {
    for (std::size_t j = 0; j < t.target.size(); ++j) {
      const T d = pred->value.data[t.row * width + t.column + j] - static_cast<T>(t.target[j]);
      loss += smooth_l1_value(d, beta);
    }
  }
  Tensor<T> out({1});
  out.data[0] = normalizer > T(0) ? loss / normalizer : T(0);
  return make_op<T>(std::move(out), {pred},
                    [targets = std::move(targets), beta, normalizer, width](Node<T>& self) {
                      if (!(normalizer > T(0))) return;
                      auto& g = self.parents[0]->ensure_grad();
                      const T s = self.grad.data[0] / normalizer;
                      for (const auto& t : targets) {
                        for (std::size_t j = 0; j < t.target.size(); ++j) {
                          const std::size_t k = t.row * width + t.column + j;
                          const T d = self.parents[0]->value.data[k] - static_cast<T>(t.target[j]);
                          const T gd = std::abs(d) < beta ? d / beta : (d > 0 ? T(1) : T(-1));
                          g.data[k] += s * gd;
                        }
                      }
                    });
}

// sum_i weights[i] * terms[i] for scalar terms.
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, std::vector<T> weights) {
  Tensor<T> out({1});
  for (std::size_t i = 0; i < terms.size(); ++i) out.data[0] += weights[i] * terms[i]->value.data[0];
  return make_op<T>(std::move(out), terms, [weights](Node<T>& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      if (self.parents[i]->requires_grad) {
        self.parents[i]->ensure_grad().data[0] += weights[i] * self.grad.data[0];
      }
    }
  });
}

}  // namespace cadnet::nn
