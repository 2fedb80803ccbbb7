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

// Two-stage detector glue: per-image forward, proposal generation, training
// losses and inference decoding on top of Model<T>.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "cadnet/geometry.hpp"
#include "cadnet/netcore.hpp"
#include "cadnet/ops.hpp"
#include "cadnet/random.hpp"
#include "cadnet/targets.hpp"

namespace cadnet {

struct DetectorParams {
  AssignThresholds rpn_thresholds{0.7, 0.3, true};
  AssignThresholds roi_thresholds{0.5, 0.5, true};
  int rpn_batch = 256;
  double rpn_positive_fraction = 0.5;
  int roi_batch = 64;
  double roi_positive_fraction = 0.25;
  int rpn_pre_nms_train = 600;
  int rpn_post_nms_train = 100;
  int rpn_pre_nms_test = 300;
  int rpn_post_nms_test = 100;
  double rpn_nms = 0.7;
  double min_proposal_size = 1.0;
  double lambda_hbb = 1.0;
  double lambda_obb = 1.0;
  double smooth_l1_beta = 1.0;
  double score_threshold = 0.05;
  double nms_threshold = kDefaultNmsThreshold;
  int max_detections = 100;
};

template <typename T>
struct ForwardState {
  BackboneOutput<T> backbone;
  FeaturePyramid<T> pyramid;
  AttentionPyramid<T> attention;
  nn::Var<T> global;  // null when the branch is off
  RpnOutput<T> rpn;
  AnchorSet anchors;
  int width = 0;
  int height = 0;
};

template <typename T>
ForwardState<T> forward_image(const Model<T>& model, const nn::Var<T>& image) {
  const auto& cfg = model.config();
  ForwardState<T> st;
  st.height = image->value.dim(1);
  st.width = image->value.dim(2);
  st.backbone = model.backbone_forward(image);
  st.pyramid = model.fpn_forward(st.backbone);
  st.attention = model.attention_forward(st.pyramid);
  if (cfg.gcnet) st.global = model.gcnet_forward(st.backbone.c[3]);
  st.rpn = model.rpn_forward(cfg.rpn_on_attention ? st.attention.a : st.pyramid.p);
  st.anchors = make_anchors(cfg.anchors, st.rpn.grid, kLevelStrides);
  return st;
}

struct Proposals {
  std::vector<HBB> boxes;
  std::vector<double> objectness;
};

inline HBB clip_to_image(HBB b, double width, double height) {
  b.xmin = std::clamp(b.xmin, 0.0, width);
  b.xmax = std::clamp(b.xmax, 0.0, width);
  b.ymin = std::clamp(b.ymin, 0.0, height);
  b.ymax = std::clamp(b.ymax, 0.0, height);
  return b;
}

// Decodes the top `pre_nms` anchors per level, clips them to the image,
// drops tiny boxes and keeps `post_nms` after class-agnostic NMS.
template <typename T>
Proposals generate_proposals(const ForwardState<T>& st, int pre_nms, int post_nms, double nms_threshold,
                             double min_size) {
  const auto& obj = st.rpn.objectness->value.data;
  const auto& del = st.rpn.deltas->value.data;
  std::vector<HBB> boxes;
  std::vector<double> scores;
  for (std::size_t l = 0; l + 1 < st.anchors.level_begin.size(); ++l) {
    const int b = st.anchors.level_begin[l], e = st.anchors.level_begin[l + 1];
    std::vector<int> idx(static_cast<std::size_t>(e - b));
    for (int i = b; i < e; ++i) idx[static_cast<std::size_t>(i - b)] = i;
    const auto k = std::min<std::size_t>(idx.size(), static_cast<std::size_t>(pre_nms));
    std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(k), idx.end(), [&](int x, int y) {
      return obj[x] > obj[y] || (obj[x] == obj[y] && x < y);
    });
    for (std::size_t t = 0; t < k; ++t) {
      const int i = idx[t];
      const HbbDeltas d{del[4 * i], del[4 * i + 1], del[4 * i + 2], del[4 * i + 3]};
      const HBB box = clip_to_image(decode_hbb(d, st.anchors.anchors[i]), st.width, st.height);
      if (box.width() < min_size || box.height() < min_size) continue;
      boxes.push_back(box);
      scores.push_back(1.0 / (1.0 + std::exp(-static_cast<double>(obj[i]))));
    }
  }
  const auto keep = nms_hbb(boxes, scores, nms_threshold, static_cast<std::size_t>(post_nms));
  Proposals out;
  for (auto i : keep) {
    out.boxes.push_back(boxes[i]);
    out.objectness.push_back(scores[i]);
  }
  return out;
}

template <typename T>
struct RpnLoss {
  nn::Var<T> cls;
  nn::Var<T> box;
};

template <typename T>
RpnLoss<T> rpn_loss(const RpnOutput<T>& out, const TargetAssignment& a, T beta) {
  std::vector<std::size_t> idx;
  std::vector<int> labels;
  std::vector<nn::RowTarget> box;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.labels[i] == kIgnore) continue;
    idx.push_back(i);
    labels.push_back(a.labels[i] > 0 ? 1 : 0);
    if (a.labels[i] > 0) box.push_back({i, 0, {a.hbb_deltas[i].begin(), a.hbb_deltas[i].end()}});
  }
  const T npos = static_cast<T>(box.size());
  return {nn::binary_cross_entropy(out.objectness, idx, labels),
          nn::smooth_l1(out.deltas, std::move(box), beta, npos)};
}

template <typename T>
struct DetectionLoss {
  nn::Var<T> total;
  nn::Var<T> cls;
  nn::Var<T> hbb;
  nn::Var<T> obb;
};

// Row i of the head outputs corresponds to entry i of the assignment.
// Classification covers every labelled row; box terms are averaged over
// positives (OBB over positives that carry an oriented target).
template <typename T>
DetectionLoss<T> detection_loss(const HeadOutput<T>& out, const TargetAssignment& a, T lambda_hbb,
                                T lambda_obb, T beta) {
  if (static_cast<std::size_t>(out.cls->value.dim(0)) != a.size()) {
    throw ShapeError("detection_loss: outputs and assignment differ in length");
  }
  std::vector<std::size_t> rows;
  std::vector<int> labels;
  std::vector<nn::RowTarget> hbb, obb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int l = a.labels[i];
    if (l == kIgnore) continue;
    rows.push_back(i);
    labels.push_back(l);
    if (l > 0) {
      const auto k = static_cast<std::size_t>(l - 1);
      hbb.push_back({i, 4 * k, {a.hbb_deltas[i].begin(), a.hbb_deltas[i].end()}});
      if (a.obb_deltas[i]) obb.push_back({i, 5 * k, {a.obb_deltas[i]->begin(), a.obb_deltas[i]->end()}});
    }
  }
  if (rows.empty()) throw Error("detection_loss: assignment has no positives and no negatives");
  DetectionLoss<T> d;
  d.cls = nn::softmax_cross_entropy(out.cls, rows, labels);
  const T nh = static_cast<T>(hbb.size()), no = static_cast<T>(obb.size());
  d.hbb = nn::smooth_l1(out.hbb, std::move(hbb), beta, nh);
  d.obb = nn::smooth_l1(out.obb, std::move(obb), beta, no);
  d.total = nn::weighted_sum<T>({d.cls, d.hbb, d.obb}, {T(1), lambda_hbb, lambda_obb});
  return d;
}

template <typename T>
struct LossTerms {
  nn::Var<T> total;
  nn::Var<T> cls;
  nn::Var<T> hbb;
  nn::Var<T> obb;
  nn::Var<T> rpn_cls;
  nn::Var<T> rpn_box;
};

// Full training objective for one image. When `fixed_regions` is given
// those regions are used as the (unsampled) second-stage inputs instead of
// RPN proposals.
template <typename T>
LossTerms<T> training_loss(const Model<T>& model, const nn::Var<T>& image, const std::vector<GroundTruth>& gts,
                           const DetectorParams& p, Rng& rng,
                           const std::optional<std::vector<HBB>>& fixed_regions = std::nullopt) {
  const auto& cfg = model.config();
  const T beta = static_cast<T>(p.smooth_l1_beta);
  ForwardState<T> st = forward_image(model, image);

  TargetAssignment rpn_a = assign_targets(st.anchors.anchors, gts, p.rpn_thresholds);
  sample_assignment(rpn_a, static_cast<std::size_t>(p.rpn_batch), p.rpn_positive_fraction, rng);
  RpnLoss<T> rl = rpn_loss(st.rpn, rpn_a, beta);

  std::vector<HBB> regions;
  TargetAssignment roi_a;
  if (fixed_regions) {
    regions = *fixed_regions;
    roi_a = assign_targets(regions, gts, p.roi_thresholds);
  } else {
    Proposals props = generate_proposals(st, p.rpn_pre_nms_train, p.rpn_post_nms_train, p.rpn_nms,
                                         p.min_proposal_size);
    std::vector<HBB> candidates = props.boxes;
    for (const auto& g : gts) candidates.push_back(g.hbb);
    TargetAssignment all = assign_targets(candidates, gts, p.roi_thresholds);
    const auto keep = sample_assignment(all, static_cast<std::size_t>(p.roi_batch), p.roi_positive_fraction, rng);
    for (auto i : keep) {
      regions.push_back(candidates[i]);
      roi_a.labels.push_back(all.labels[i]);
      roi_a.matched.push_back(all.matched[i]);
      roi_a.hbb_deltas.push_back(all.hbb_deltas[i]);
      roi_a.obb_deltas.push_back(all.obb_deltas[i]);
    }
  }

  const auto& levels = st.attention.a;
  nn::Var<T> region = model.roi_extract(levels, regions);
  nn::Var<T> local = cfg.plcnet ? model.plcnet_forward(levels, regions) : nn::Var<T>{};
  HeadOutput<T> head = model.head_forward(region, st.global, local);
  DetectionLoss<T> dl = detection_loss(head, roi_a, static_cast<T>(p.lambda_hbb),
                                       static_cast<T>(p.lambda_obb), beta);
  LossTerms<T> out;
  out.cls = dl.cls;
  out.hbb = dl.hbb;
  out.obb = dl.obb;
  out.rpn_cls = rl.cls;
  out.rpn_box = rl.box;
  out.total = nn::weighted_sum<T>({dl.total, rl.cls, rl.box}, {T(1), T(1), T(1)});
  return out;
}

struct Detections {
  std::vector<ScoredDetection> obb;
  std::vector<ScoredDetection> hbb;
};

inline std::vector<ScoredDetection> keep_top(const std::vector<ScoredDetection>& dets, double nms_threshold,
                                             int max_keep) {
  auto keep = rotated_nms(dets, nms_threshold);
  if (keep.size() > static_cast<std::size_t>(max_keep)) keep.resize(static_cast<std::size_t>(max_keep));
  std::vector<ScoredDetection> out;
  for (auto i : keep) out.push_back(dets[i]);
  return out;
}

// Decodes class-specific boxes from head outputs for the given regions.
template <typename T>
Detections decode_detections(const HeadOutput<T>& head, std::span<const HBB> regions, int num_classes,
                             double width, double height, const DetectorParams& p) {
  Detections out;
  const int c = num_classes + 1;
  for (std::size_t r = 0; r < regions.size(); ++r) {
    const T* z = head.cls->value.data.data() + r * static_cast<std::size_t>(c);
    T m = z[0];
    for (int j = 1; j < c; ++j) m = std::max(m, z[j]);
    double sum = 0;
    std::vector<double> prob(static_cast<std::size_t>(c));
    for (int j = 0; j < c; ++j) sum += prob[static_cast<std::size_t>(j)] = std::exp(static_cast<double>(z[j] - m));
    for (int k = 0; k < num_classes; ++k) {
      const double score = prob[static_cast<std::size_t>(k + 1)] / sum;
      if (score <= p.score_threshold) continue;
      const T* hd = head.hbb->value.data.data() + r * 4 * num_classes + 4 * k;
      const T* od = head.obb->value.data.data() + r * 5 * num_classes + 5 * k;
      HBB hb = clip_to_image(decode_hbb({hd[0], hd[1], hd[2], hd[3]}, regions[r]), width, height);
      if (hb.width() > 0 && hb.height() > 0) out.hbb.push_back({hb, k, score});
      const OBB ob = decode_obb({od[0], od[1], od[2], od[3], od[4]}, regions[r]);
      if (ob.valid()) out.obb.push_back({ob, k, score});
    }
  }
  out.obb = keep_top(out.obb, p.nms_threshold, p.max_detections);
  out.hbb = keep_top(out.hbb, p.nms_threshold, p.max_detections);
  return out;
}

template <typename T>
Detections detect(const Model<T>& model, const nn::Var<T>& image, const DetectorParams& p) {
  nn::NoGradGuard guard;
  const auto& cfg = model.config();
  ForwardState<T> st = forward_image(model, image);
  Proposals props = generate_proposals(st, p.rpn_pre_nms_test, p.rpn_post_nms_test, p.rpn_nms,
                                       p.min_proposal_size);
  if (props.boxes.empty()) return {};
  const auto& levels = st.attention.a;
  nn::Var<T> region = model.roi_extract(levels, props.boxes);
  nn::Var<T> local = cfg.plcnet ? model.plcnet_forward(levels, props.boxes) : nn::Var<T>{};
  HeadOutput<T> head = model.head_forward(region, st.global, local);
  return decode_detections(head, props.boxes, cfg.num_classes, st.width, st.height, p);
}

}  // namespace cadnet
