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

#include <gtest/gtest.h>

#include <cmath>

#include "cadnet/detector.hpp"
#include "cadnet/netcore.hpp"

using namespace cadnet;

namespace {

ModelConfig tiny_config(bool gcnet = true, bool plcnet = true, bool attention = true) {
  ModelConfig c;
  c.stem_width = 4;
  c.backbone_widths = {4, 6, 8, 8};
  c.d_fpn = 8;
  c.d_g = 6;
  c.head_hidden = 12;
  c.num_classes = 2;
  c.anchors.sizes = {8, 16, 32, 64};
  c.roi_canonical_size = 32;
  c.roi_canonical_level = 4;
  c.roi.output_size = 3;
  c.roi.sampling_ratio = 2;
  c.gcnet = gcnet;
  c.plcnet = plcnet;
  c.attention = attention;
  return c;
}

template <typename T>
nn::Var<T> random_image(int h, int w, Rng& rng) {
  nn::Tensor<T> t({3, h, w});
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(-1.5, 1.5));
  return nn::constant(std::move(t));
}

// Direct-loop convolution with zero padding.
std::vector<double> naive_conv(const nn::Tensor<double>& x, const nn::Tensor<double>& w,
                               const nn::Tensor<double>& b, int stride, int pad, int& oh, int& ow) {
  const int c = x.dim(0), h = x.dim(1), wd = x.dim(2), o = w.dim(0), k = w.dim(2);
  oh = (h + 2 * pad - k) / stride + 1;
  ow = (wd + 2 * pad - k) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(o) * oh * ow);
  for (int oc = 0; oc < o; ++oc)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        double acc = b.data[oc];
        for (int ic = 0; ic < c; ++ic)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = y * stride + ky - pad, ix = xx * stride + kx - pad;
              if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
              acc += w.data[((static_cast<std::size_t>(oc) * c + ic) * k + ky) * k + kx] * x.at(ic, iy, ix);
            }
        out[(static_cast<std::size_t>(oc) * oh + y) * ow + xx] = acc;
      }
  return out;
}

// Bilinear value of a single-channel map at continuous (y, x), zero more
// than one cell outside, edge-clamped within that margin.
double bilinear(const nn::Tensor<double>& f, int c, double y, double x) {
  const int h = f.dim(1), w = f.dim(2);
  if (y < -1 || y > h || x < -1 || x > w) return 0.0;
  y = std::clamp(y, 0.0, h - 1.0);
  x = std::clamp(x, 0.0, w - 1.0);
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double ly = y - y0, lx = x - x0;
  return (1 - ly) * (1 - lx) * f.at(c, y0, x0) + (1 - ly) * lx * f.at(c, y0, x1) +
         ly * (1 - lx) * f.at(c, y1, x0) + ly * lx * f.at(c, y1, x1);
}

}  // namespace

TEST(Conv2d, MatchesDirectLoops) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const int c = rng.randint(1, 4), o = rng.randint(1, 5), k = rng.randint(0, 1) ? 3 : 1;
    const int stride = rng.randint(1, 2), pad = k == 3 ? 1 : 0;
    nn::Tensor<double> x({c, rng.randint(3, 9), rng.randint(3, 9)}), w({o, c, k, k}), b({o});
    for (auto* p : {&x, &w, &b})
      for (auto& v : p->data) v = rng.uniform(-1, 1);
    int oh = 0, ow = 0;
    const auto want = naive_conv(x, w, b, stride, pad, oh, ow);
    const auto got = nn::conv2d(nn::constant(x), nn::constant(w), nn::constant(b), stride, pad);
    ASSERT_EQ(got->value.shape, (std::vector<int>{o, oh, ow}));
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got->value.data[i], want[i], 1e-12);
  }
}

TEST(Backbone, LevelShapes) {
  Rng rng(2);
  const Model<float> m(tiny_config(), 3);
  for (auto [h, w] : {std::pair{64, 64}, std::pair{128, 96}}) {
    const auto c = m.backbone_forward(random_image<float>(h, w, rng));
    const auto p = m.fpn_forward(c);
    for (int l = 0; l < kNumLevels; ++l) {
      const int s = kLevelStrides[l];
      EXPECT_EQ(c.c[l]->value.shape, (std::vector<int>{tiny_config().backbone_widths[l], h / s, w / s}));
      EXPECT_EQ(p.p[l]->value.shape, (std::vector<int>{8, h / s, w / s}));
    }
  }
  EXPECT_THROW(m.backbone_forward(random_image<float>(48, 64, rng)), ShapeError);
}

TEST(Fpn, TopDownPathwayReachesFinestLevel) {
  // Perturbing only C5 must change P2 through the top-down additions.
  Rng rng(3);
  const Model<double> m(tiny_config(), 4);
  auto c = m.backbone_forward(random_image<double>(64, 64, rng));
  const auto base = m.fpn_forward(c);
  c.c[3] = nn::constant(c.c[3]->value);
  for (auto& v : c.c[3]->value.data) v += 1.0;
  const auto moved = m.fpn_forward(c);
  double diff = 0;
  for (std::size_t i = 0; i < base.p[0]->value.numel(); ++i) {
    diff += std::abs(base.p[0]->value.data[i] - moved.p[0]->value.data[i]);
  }
  EXPECT_GT(diff, 1e-6);
}

TEST(Fpn, ZeroInputIsBiasOnly) {
  // With zero image and zero biases every feature is exactly zero, and the
  // map is linear in the lateral/smooth biases.
  Model<double> m(tiny_config(), 5);
  for (const auto& [name, p] : m.params()) {
    if (name.size() > 5 && name.compare(name.size() - 5, 5, ".bias") == 0) p->value.fill(0.0);
  }
  const auto pyr = m.fpn_forward(m.backbone_forward(nn::constant(nn::Tensor<double>({3, 64, 64}))));
  for (const auto& p : pyr.p)
    for (double v : p->value.data) EXPECT_EQ(v, 0.0);
}

TEST(Attention, InvariantsOverRandomInputs) {
  const std::array<ModelConfig, 3> cfgs{tiny_config(), tiny_config(false, false, true),
                                        [] {
                                          auto c = tiny_config();
                                          c.d_fpn = 12;
                                          c.backbone_widths = {6, 8, 10, 12};
                                          return c;
                                        }()};
  Rng rng(6);
  for (int t = 0; t < 50; ++t) {
    const Model<float> m(cfgs[t % 3], 100 + t);
    const auto pyr = m.fpn_forward(m.backbone_forward(random_image<float>(32 * rng.randint(1, 3), 64, rng)));
    const auto att = m.attention_forward(pyr);
    for (int l = 0; l < kNumLevels; ++l) {
      const auto& s = att.s[l]->value;
      const auto& p = pyr.p[l]->value;
      ASSERT_EQ(s.shape, (std::vector<int>{1, p.dim(1), p.dim(2)}));
      for (float v : s.data) {
        ASSERT_GT(v, 0.0f);
        ASSERT_LT(v, 1.0f);
      }
      const std::size_t plane = s.numel();
      for (std::size_t i = 0; i < p.numel(); ++i) {
        ASSERT_EQ(att.a[l]->value.data[i], s.data[i % plane] * p.data[i]);
      }
    }
  }
}

TEST(Attention, ZeroFinalLayerIsHalf) {
  Rng rng(7);
  Model<float> m(tiny_config(), 8);
  for (int l = 2; l <= 5; ++l) {
    m.param("attention.p" + std::to_string(l) + ".1.weight")->value.fill(0.0f);
    m.param("attention.p" + std::to_string(l) + ".1.bias")->value.fill(0.0f);
  }
  const auto pyr = m.fpn_forward(m.backbone_forward(random_image<float>(64, 96, rng)));
  const auto att = m.attention_forward(pyr);
  for (int l = 0; l < kNumLevels; ++l) {
    for (float v : att.s[l]->value.data) EXPECT_EQ(v, 0.5f);
    for (std::size_t i = 0; i < pyr.p[l]->value.numel(); ++i) {
      EXPECT_EQ(att.a[l]->value.data[i], 0.5f * pyr.p[l]->value.data[i]);
    }
  }
}

TEST(Attention, LargeNegativeBiasSuppresses) {
  Rng rng(9);
  Model<double> m(tiny_config(), 10);
  for (int l = 2; l <= 5; ++l) {
    m.param("attention.p" + std::to_string(l) + ".1.weight")->value.fill(0.0);
    m.param("attention.p" + std::to_string(l) + ".1.bias")->value.fill(-40.0);
  }
  const auto pyr = m.fpn_forward(m.backbone_forward(random_image<double>(64, 64, rng)));
  const auto att = m.attention_forward(pyr);
  for (int l = 0; l < kNumLevels; ++l)
    for (std::size_t i = 0; i < pyr.p[l]->value.numel(); ++i)
      EXPECT_LE(std::abs(att.a[l]->value.data[i]), 1e-16 * (1 + std::abs(pyr.p[l]->value.data[i])));
}

TEST(Attention, DisabledAliasesPyramid) {
  Rng rng(11);
  const Model<float> m(tiny_config(true, true, false), 12);
  EXPECT_FALSE(m.has_param("attention.p2.0.weight"));
  const auto pyr = m.fpn_forward(m.backbone_forward(random_image<float>(64, 64, rng)));
  const auto att = m.attention_forward(pyr);
  for (int l = 0; l < kNumLevels; ++l) {
    EXPECT_EQ(att.a[l], pyr.p[l]);
    EXPECT_FALSE(att.s[l]);
  }
}

TEST(GlobalContext, LengthIndependentOfInputSize) {
  Rng rng(13);
  const Model<float> m(tiny_config(), 14);
  for (int s : {32, 64, 96}) {
    const auto g = m.gcnet_forward(m.backbone_forward(random_image<float>(s, s, rng)).c[3]);
    EXPECT_EQ(g->value.shape, (std::vector<int>{1, 6}));
  }
  const Model<float> off(tiny_config(false), 14);
  EXPECT_THROW(off.gcnet_forward(nn::constant(nn::Tensor<float>({8, 2, 2}))), ConfigError);
}

TEST(GlobalContext, IsSpatialAverageOfConvStack) {
  Rng rng(15);
  const Model<double> m(tiny_config(), 16);
  const auto c5 = m.backbone_forward(random_image<double>(96, 64, rng)).c[3];
  int oh = 0, ow = 0;
  auto h = naive_conv(c5->value, m.param("gcnet.conv.0.weight")->value, m.param("gcnet.conv.0.bias")->value, 1,
                      1, oh, ow);
  for (auto& v : h) v = std::max(v, 0.0);
  nn::Tensor<double> ht({6, oh, ow});
  ht.data.assign(h.begin(), h.end());
  const auto h2 = naive_conv(ht, m.param("gcnet.conv.1.weight")->value, m.param("gcnet.conv.1.bias")->value, 1, 1,
                             oh, ow);
  const auto g = m.gcnet_forward(c5);
  for (int k = 0; k < 6; ++k) {
    double mean = 0;
    for (int i = 0; i < oh * ow; ++i) mean += h2[static_cast<std::size_t>(k * oh * ow + i)];
    EXPECT_NEAR(g->value.data[k], mean / (oh * ow), 1e-12);
  }
}

TEST(RoiLevel, CanonicalMapping) {
  EXPECT_EQ(roi_level(HBB{0, 0, 224, 224}, 224, 4), 2);
  EXPECT_EQ(roi_level(HBB{0, 0, 112, 112}, 224, 4), 1);
  EXPECT_EQ(roi_level(HBB{0, 0, 4, 4}, 224, 4), 0);
  EXPECT_EQ(roi_level(HBB{0, 0, 2000, 2000}, 224, 4), 3);
}

TEST(RoiAlign, ConstantMap) {
  nn::Tensor<double> f({2, 8, 8}, 3.25);
  const std::vector<HBB> regions{{4, 4, 20, 28}, {0.3, 1.7, 9.9, 12.1}};
  const std::vector<int> strides{4}, lvl{0, 0};
  const auto out = nn::roi_align<double>({nn::constant(f)}, strides, regions, lvl, {5, 2});
  ASSERT_EQ(out->value.shape, (std::vector<int>{2, 2, 5, 5}));
  for (double v : out->value.data) EXPECT_NEAR(v, 3.25, 1e-12);
}

TEST(RoiAlign, CellAlignedCropIsIdentity) {
  Rng rng(17);
  nn::Tensor<double> f({3, 10, 12});
  for (auto& v : f.data) v = rng.uniform(-1, 1);
  // Cells (x 2..5, y 3..6) at stride 8.
  const std::vector<HBB> regions{{16, 24, 48, 56}};
  const std::vector<int> strides{8}, lvl{0};
  const auto out = nn::roi_align<double>({nn::constant(f)}, strides, regions, lvl, {4, 1});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) EXPECT_EQ(out->value.data[(c * 4 + y) * 4 + x], f.at(c, 3 + y, 2 + x));
}

TEST(RoiAlign, ApproachesBinAverage) {
  // With dense sampling each output equals the mean of the bilinear surface
  // over its bin; compare against a 100 x 100 sub-grid average per bin.
  Rng rng(19);
  nn::Tensor<double> f({1, 9, 9});
  for (auto& v : f.data) v = rng.uniform(-1, 1);
  const HBB r{5.3, 7.9, 27.4, 30.2};
  const int stride = 4, os = 3;
  const std::vector<int> strides{stride}, lvl{0};
  const std::vector<HBB> regions{r};
  const auto out = nn::roi_align<double>({nn::constant(f)}, strides, regions, lvl, {os, 20});
  const double bw = r.width() / stride / os, bh = r.height() / stride / os;
  for (int py = 0; py < os; ++py) {
    for (int px = 0; px < os; ++px) {
      double acc = 0;
      for (int iy = 0; iy < 100; ++iy) {
        for (int ix = 0; ix < 100; ++ix) {
          const double y = r.ymin / stride - 0.5 + (py + (iy + 0.5) / 100) * bh;
          const double x = r.xmin / stride - 0.5 + (px + (ix + 0.5) / 100) * bw;
          acc += bilinear(f, 0, y, x);
        }
      }
      EXPECT_NEAR(out->value.data[py * os + px], acc / 1e4, 1e-3);
    }
  }
}

TEST(LocalContext, ConstantLevels) {
  const Model<double> m(tiny_config(), 20);
  std::array<nn::Var<double>, kNumLevels> levels;
  for (int l = 0; l < kNumLevels; ++l) {
    levels[l] = nn::constant(nn::Tensor<double>({8, 64 / kLevelStrides[l], 64 / kLevelStrides[l]}, 0.7));
  }
  const std::vector<HBB> regions{{3, 5, 30, 22}, {10, 10, 60, 60}};
  const auto local = m.plcnet_forward(levels, regions);
  ASSERT_EQ(local->value.shape, (std::vector<int>{2, 8}));
  const auto& w = m.param("plcnet.fuse.0.weight")->value;
  const auto& b = m.param("plcnet.fuse.0.bias")->value;
  for (int o = 0; o < 8; ++o) {
    double acc = b.data[o];
    for (int i = 0; i < 32; ++i) acc += w.data[o * 32 + i] * 0.7;
    for (int r = 0; r < 2; ++r) EXPECT_NEAR(local->value.data[r * 8 + o], std::max(acc, 0.0), 1e-12);
  }
}

TEST(LocalContext, ZeroWeightGivesRectifiedBias) {
  Rng rng(21);
  Model<double> m(tiny_config(), 22);
  m.param("plcnet.fuse.0.weight")->value.fill(0.0);
  auto& b = m.param("plcnet.fuse.0.bias")->value;
  for (int i = 0; i < 8; ++i) b.data[i] = i % 2 ? 0.4 : -0.4;
  const auto st = forward_image(m, random_image<double>(64, 64, rng));
  const std::vector<HBB> regions{{3, 5, 30, 22}};
  const auto local = m.plcnet_forward(st.attention.a, regions);
  for (int i = 0; i < 8; ++i) EXPECT_NEAR(local->value.data[i], i % 2 ? 0.4 : 0.0, 1e-15);
}

TEST(Head, WidthsAndShapes) {
  for (int mask = 0; mask < 8; ++mask) {
    const auto cfg = tiny_config(mask & 1, mask & 2, mask & 4);
    EXPECT_EQ(cfg.head_input_width(), 8 * 9 + (mask & 1 ? 6 : 0) + (mask & 2 ? 8 : 0));
    const Model<float> m(cfg, 1);
    Rng rng(23);
    const auto st = forward_image(m, random_image<float>(64, 64, rng));
    const std::vector<HBB> regions{{1, 1, 20, 20}, {30, 2, 50, 40}, {0, 0, 64, 64}};
    const auto region = m.roi_extract(st.attention.a, regions);
    const auto local = cfg.plcnet ? m.plcnet_forward(st.attention.a, regions) : nn::Var<float>{};
    const auto out = m.head_forward(region, st.global, local);
    EXPECT_EQ(out.cls->value.shape, (std::vector<int>{3, 3}));
    EXPECT_EQ(out.hbb->value.shape, (std::vector<int>{3, 8}));
    EXPECT_EQ(out.obb->value.shape, (std::vector<int>{3, 10}));
    // Missing or extra context is rejected.
    EXPECT_THROW(m.head_forward(region, st.global ? nn::Var<float>{} : region, local), ShapeError);
  }
}

TEST(Head, SoftmaxScoresSumToOne) {
  Rng rng(24);
  HeadOutput<double> out;
  nn::Tensor<double> cls({4, 4}), hbb({4, 12}), obb({4, 15});
  for (auto& v : cls.data) v = rng.uniform(-3, 3);
  out = {nn::constant(cls), nn::constant(hbb), nn::constant(obb)};
  DetectorParams p;
  p.score_threshold = 0.0;
  p.nms_threshold = 1.0;
  const std::vector<HBB> regions{{0, 0, 10, 10}, {20, 20, 40, 30}, {50, 5, 60, 25}, {70, 70, 90, 95}};
  const auto d = decode_detections(out, regions, 3, 100, 100, p);
  ASSERT_EQ(d.hbb.size(), 12u);
  std::vector<double> per_region(4, 0.0);
  for (const auto& det : d.hbb) {
    const HBB& h = std::get<HBB>(det.box);
    for (int r = 0; r < 4; ++r) {
      if (h == regions[r]) per_region[r] += det.score;
    }
  }
  for (int r = 0; r < 4; ++r) {
    double z = 0;
    for (int j = 0; j < 4; ++j) z += std::exp(cls.data[r * 4 + j]);
    EXPECT_NEAR(per_region[r] + std::exp(cls.data[r * 4]) / z, 1.0, 1e-12);
  }
}

TEST(Variants, SharedGroupsInitializedIdentically) {
  const Model<float> full(tiny_config(), 77);
  for (int mask = 0; mask < 8; ++mask) {
    const Model<float> v(tiny_config(mask & 1, mask & 2, mask & 4), 77);
    for (const auto& [name, p] : v.params()) {
      ASSERT_TRUE(full.has_param(name)) << name;
      EXPECT_EQ(p->value.data, full.param(name)->value.data) << name;
    }
    EXPECT_EQ(v.has_param("gcnet.conv.0.weight"), static_cast<bool>(mask & 1));
    EXPECT_EQ(v.has_param("plcnet.fuse.0.weight"), static_cast<bool>(mask & 2));
    EXPECT_EQ(v.has_param("attention.p3.1.bias"), static_cast<bool>(mask & 4));
  }
}

TEST(Variants, ZeroedContextMatchesBaseline) {
  // Zeroing the head slices that read the context vectors must reproduce
  // the variant without those branches, since everything else is shared.
  Rng rng(25);
  Model<double> full(tiny_config(true, true, false), 31);
  const Model<double> base(tiny_config(false, false, false), 31);
  full.param("head.fc_global.0.weight")->value.fill(0.0);
  full.param("head.fc_local.0.weight")->value.fill(0.0);
  const auto img = random_image<double>(64, 64, rng);
  const std::vector<HBB> regions{{4, 4, 30, 30}, {20, 8, 60, 40}};
  const auto sf = forward_image(full, img);
  const auto sb = forward_image(base, img);
  const auto of = full.head_forward(full.roi_extract(sf.attention.a, regions), sf.global,
                                    full.plcnet_forward(sf.attention.a, regions));
  const auto ob = base.head_forward(base.roi_extract(sb.attention.a, regions), nullptr, nullptr);
  for (std::size_t i = 0; i < of.cls->value.numel(); ++i) EXPECT_NEAR(of.cls->value.data[i], ob.cls->value.data[i], 1e-12);
  for (std::size_t i = 0; i < of.obb->value.numel(); ++i) EXPECT_NEAR(of.obb->value.data[i], ob.obb->value.data[i], 1e-12);
  // And with the original weights the context does change the output.
  const Model<double> fresh(tiny_config(true, true, false), 31);
  const auto sr = forward_image(fresh, img);
  const auto orr = fresh.head_forward(fresh.roi_extract(sr.attention.a, regions), sr.global,
                                      fresh.plcnet_forward(sr.attention.a, regions));
  double diff = 0;
  for (std::size_t i = 0; i < orr.cls->value.numel(); ++i) diff += std::abs(orr.cls->value.data[i] - ob.cls->value.data[i]);
  EXPECT_GT(diff, 1e-9);
}

TEST(Model, DeterministicInit) {
  const Model<float> a(tiny_config(), 5), b(tiny_config(), 5), c(tiny_config(), 6);
  bool differs = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    EXPECT_EQ(a.params()[i].second->value.data, b.params()[i].second->value.data);
    if (a.params()[i].second->value.data != c.params()[i].second->value.data) differs = true;
  }
  EXPECT_TRUE(differs);
}

TEST(Proposals, ZeroDeltasReturnAnchors) {
  Rng rng(26);
  Model<float> m(tiny_config(), 27);
  m.param("rpn.deltas.0.weight")->value.fill(0.0f);
  m.param("rpn.deltas.0.bias")->value.fill(0.0f);
  const auto st = forward_image(m, random_image<float>(64, 64, rng));
  const auto props = generate_proposals(st, 100000, 100000, 1.0, 0.0);
  ASSERT_FALSE(props.boxes.empty());
  for (const auto& b : props.boxes) {
    double best = 1e9;
    for (const auto& a : st.anchors.anchors) {
      const HBB c = clip_to_image(a, 64, 64);
      best = std::min(best, std::max({std::abs(c.xmin - b.xmin), std::abs(c.ymin - b.ymin),
                                      std::abs(c.xmax - b.xmax), std::abs(c.ymax - b.ymax)}));
    }
    EXPECT_LT(best, 1e-12) << b.xmin << "," << b.ymin;
  }
  EXPECT_TRUE(std::is_sorted(props.objectness.rbegin(), props.objectness.rend()));
}

// Gradient check ----------------------------------------------------------------

namespace {

struct GradFixture {
  Model<double> model;
  nn::Var<double> image;
  std::vector<GroundTruth> gts;
  std::vector<HBB> regions;
  DetectorParams params;

  explicit GradFixture(std::uint64_t seed) : model(tiny_config(), seed) {
    Rng rng(seed);
    image = random_image<double>(64, 64, rng);
    gts.push_back({HBB{}, OBB{30, 26, 24, 12, 35}, 1});
    gts[0].hbb = obb_to_hbb(*gts[0].obb);
    regions = {gts[0].hbb, HBB{0, 40, 18, 62}};
    params.rpn_batch = 32;
    // Output layers start near zero; lift them so every group carries a
    // gradient well above finite-difference round-off.
    Rng lift(seed + 1);
    for (const auto& [name, p] : model.params()) {
      const bool small_init = name.rfind("head.cls", 0) == 0 || name.rfind("head.hbb", 0) == 0 ||
                              name.rfind("head.obb", 0) == 0 || name.rfind("rpn.objectness", 0) == 0 ||
                              name.rfind("rpn.deltas", 0) == 0 ||
                              (name.rfind("attention.", 0) == 0 && name.find(".1.") != std::string::npos);
      if (small_init) {
        for (auto& v : p->value.data) v = 0.3 * lift.normal();
      }
    }
  }

  double loss() const {
    nn::NoGradGuard guard;
    Rng rng(99);
    return training_loss(model, image, gts, params, rng, regions).total->value[0];
  }
};

}  // namespace

TEST(GradientCheck, CentralDifferencesPerGroup) {
  GradFixture fx(41);
  {
    Rng rng(99);
    fx.model.zero_grad();
    nn::backward(training_loss(fx.model, fx.image, fx.gts, fx.params, rng, fx.regions).total);
  }
  Rng pick(5);
  const double h = 1e-6;
  double worst = 0;
  for (const auto& [name, p] : fx.model.params()) {
    const std::size_t n = p->value.numel();
    for (int s = 0; s < 20; ++s) {
      const std::size_t i = n <= 20 ? static_cast<std::size_t>(s) % n : static_cast<std::size_t>(pick.below(n));
      const double keep = p->value.data[i];
      p->value.data[i] = keep + h;
      const double up = fx.loss();
      p->value.data[i] = keep - h;
      const double down = fx.loss();
      p->value.data[i] = keep;
      const double num = (up - down) / (2 * h), ana = p->grad.data[i];
      const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-7});
      worst = std::max(worst, rel);
      EXPECT_LT(rel, 1e-3) << name << "[" << i << "] analytic " << ana << " numeric " << num;
    }
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(GradientCheck, ContextAndHeadGroupsReceiveGradient) {
  GradFixture fx(43);
  Rng rng(99);
  fx.model.zero_grad();
  nn::backward(training_loss(fx.model, fx.image, fx.gts, fx.params, rng, fx.regions).total);
  for (const auto& [name, p] : fx.model.params()) {
    for (const char* prefix : {"gcnet.", "plcnet.", "attention.", "head.hbb", "head.obb", "head.fc", "head.cls"}) {
      if (name.rfind(prefix, 0) != 0) continue;
      double norm = 0;
      for (double g : p->grad.data) norm += g * g;
      EXPECT_GT(norm, 0.0) << name;
    }
  }
}
