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

// VOC-style detection evaluation: greedy matching, all-points interpolated
// average precision and mAP, plus the per-class detection text files.

#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cadnet/error.hpp"
#include "cadnet/geometry.hpp"
#include "cadnet/ingest.hpp"

namespace cadnet {

struct GtInstance {
  Box box;
  int class_id = 0;
  bool difficult = false;
};

enum class MatchFlag { kTruePositive, kFalsePositive, kIgnored };

// Flags are returned in the input order of `dets`. Detections are visited
// by descending score (ties by input order); each may claim the unmatched
// same-class gt of highest IoU (ties by lower gt index). A detection whose
// best candidate is difficult is ignored; difficult gts can absorb any
// number of detections.
inline std::vector<MatchFlag> match_detections(const std::vector<ScoredDetection>& dets,
                                               const std::vector<GtInstance>& gts, double iou_threshold,
                                               BoxKind kind) {
  for (const auto& d : dets) {
    if (kind_of(d.box) != kind) throw BoxKindError("detection box kind differs from the task");
  }
  for (const auto& g : gts) {
    if (kind_of(g.box) != kind) throw BoxKindError("ground-truth box kind differs from the task");
  }
  std::vector<MatchFlag> flags(dets.size(), MatchFlag::kFalsePositive);
  std::vector<char> used(gts.size(), 0);
  for (std::size_t i : score_order(dets)) {
    double best = -1.0;
    int best_j = -1;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (gts[j].class_id != dets[i].class_id) continue;
      if (used[j] && !gts[j].difficult) continue;
      const double v = iou(dets[i].box, gts[j].box);
      if (v > best) {
        best = v;
        best_j = static_cast<int>(j);
      }
    }
    if (best_j < 0 || best < iou_threshold) continue;
    const auto j = static_cast<std::size_t>(best_j);
    if (gts[j].difficult) {
      flags[i] = MatchFlag::kIgnored;
    } else {
      flags[i] = MatchFlag::kTruePositive;
      used[j] = 1;
    }
  }
  return flags;
}

struct PrecisionRecall {
  std::vector<double> recall;
  std::vector<double> precision;  // monotone envelope
};

struct ApResult {
  std::optional<double> ap;  // empty when the class has neither gts nor detections
  PrecisionRecall curve;
};

// All-points interpolated AP. Ignored flags are dropped; the remaining flags
// are ordered by descending score (ties by input order).
inline ApResult average_precision_curve(const std::vector<MatchFlag>& flags, const std::vector<double>& scores,
                                        std::size_t num_gt) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (flags[i] != MatchFlag::kIgnored) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  ApResult res;
  if (num_gt == 0) {
    if (!order.empty()) res.ap = 0.0;
    return res;
  }
  double tp = 0, fp = 0;
  for (auto i : order) {
    (flags[i] == MatchFlag::kTruePositive ? tp : fp) += 1;
    res.curve.recall.push_back(tp / static_cast<double>(num_gt));
    res.curve.precision.push_back(tp / (tp + fp));
  }
  auto& prec = res.curve.precision;
  for (std::size_t i = prec.size(); i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double ap = 0, prev_recall = 0;
  for (std::size_t i = 0; i < prec.size(); ++i) {
    ap += (res.curve.recall[i] - prev_recall) * prec[i];
    prev_recall = res.curve.recall[i];
  }
  res.ap = ap;
  return res;
}

inline std::optional<double> average_precision(const std::vector<MatchFlag>& flags,
                                               const std::vector<double>& scores, std::size_t num_gt) {
  return average_precision_curve(flags, scores, num_gt).ap;
}

struct ClassResult {
  std::optional<double> ap;
  PrecisionRecall curve;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  std::size_t num_gt = 0;
};

struct EvalResult {
  std::vector<ClassResult> classes;
  double map = 0.0;
  std::size_t classes_counted = 0;
};

using DetectionsByImage = std::map<std::string, std::vector<ScoredDetection>>;
using GroundTruthByImage = std::map<std::string, std::vector<GtInstance>>;

// Pools detections per class across images and averages the per-class APs
// of every class that has ground truth or detections.
inline EvalResult evaluate(const DetectionsByImage& dets, const GroundTruthByImage& gts, std::size_t num_classes,
                           BoxKind kind, double iou_threshold = 0.5) {
  for (const auto& [img, ds] : dets) {
    if (!gts.count(img)) throw Error("detections reference unknown image '" + img + "'");
    for (const auto& d : ds) {
      if (d.class_id < 0 || static_cast<std::size_t>(d.class_id) >= num_classes) {
        throw UnknownClassError("detection class id " + std::to_string(d.class_id) + " out of range");
      }
    }
  }
  for (const auto& [img, gs] : gts) {
    for (const auto& g : gs) {
      if (g.class_id < 0 || static_cast<std::size_t>(g.class_id) >= num_classes) {
        throw UnknownClassError("ground-truth class id " + std::to_string(g.class_id) + " out of range");
      }
    }
  }
  EvalResult res;
  res.classes.resize(num_classes);
  double sum = 0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    std::vector<MatchFlag> flags;
    std::vector<double> scores;
    ClassResult& cr = res.classes[k];
    for (const auto& [img, gs] : gts) {
      std::vector<GtInstance> cls_gts;
      for (const auto& g : gs) {
        if (static_cast<std::size_t>(g.class_id) != k) continue;
        cls_gts.push_back(g);
        if (!g.difficult) ++cr.num_gt;
      }
      std::vector<ScoredDetection> cls_dets;
      if (auto it = dets.find(img); it != dets.end()) {
        for (const auto& d : it->second) {
          if (static_cast<std::size_t>(d.class_id) == k) cls_dets.push_back(d);
        }
      }
      const auto f = match_detections(cls_dets, cls_gts, iou_threshold, kind);
      for (std::size_t i = 0; i < f.size(); ++i) {
        flags.push_back(f[i]);
        scores.push_back(cls_dets[i].score);
        if (f[i] == MatchFlag::kTruePositive) ++cr.true_positives;
        if (f[i] == MatchFlag::kFalsePositive) ++cr.false_positives;
      }
    }
    cr.false_negatives = cr.num_gt - cr.true_positives;
    auto ap = average_precision_curve(flags, scores, cr.num_gt);
    cr.ap = ap.ap;
    cr.curve = std::move(ap.curve);
    if (cr.ap) {
      sum += *cr.ap;
      ++res.classes_counted;
    }
  }
  res.map = res.classes_counted ? sum / static_cast<double>(res.classes_counted) : 0.0;
  return res;
}

// Ground truth for one image in the requested box kind. Quads become their
// minimum-area rectangle (OBB task) or their extent (HBB task).
inline std::vector<GtInstance> gt_instances(const std::vector<AnnotatedObject>& objects, BoxKind kind) {
  std::vector<GtInstance> out;
  for (const auto& o : objects) {
    GtInstance g;
    g.class_id = o.class_id;
    g.difficult = o.difficult;
    if (const auto* q = std::get_if<Quad>(&o.shape)) {
      g.box = kind == BoxKind::kOBB ? Box{quad_to_obb(*q)} : Box{quad_to_hbb(*q)};
    } else {
      const HBB& h = std::get<HBB>(o.shape);
      g.box = kind == BoxKind::kOBB ? Box{hbb_to_obb(h)} : Box{h};
    }
    out.push_back(g);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Detection files: one file per class, "image_id score x1 y1 ... x4 y4"
// (OBB task) or "image_id score xmin ymin xmax ymax" (HBB task). Lines
// starting with '#' are headers.

inline std::string detection_file_name(BoxKind kind, const std::string& class_name) {
  return (kind == BoxKind::kOBB ? "Task1_" : "Task2_") + class_name + ".txt";
}

inline std::string detection_header(BoxKind kind) {
  return kind == BoxKind::kOBB ? "# image_id score x1 y1 x2 y2 x3 y3 x4 y4\n"
                               : "# image_id score xmin ymin xmax ymax\n";
}

inline std::string format_detection(const std::string& image_id, const ScoredDetection& d) {
  char buf[256];
  std::string line = image_id;
  std::snprintf(buf, sizeof buf, " %.6f", d.score);
  line += buf;
  if (const auto* o = std::get_if<OBB>(&d.box)) {
    for (const Point& p : obb_to_quad(*o).pts) {
      std::snprintf(buf, sizeof buf, " %.2f %.2f", p.x, p.y);
      line += buf;
    }
  } else {
    const HBB& h = std::get<HBB>(d.box);
    std::snprintf(buf, sizeof buf, " %.2f %.2f %.2f %.2f", h.xmin, h.ymin, h.xmax, h.ymax);
    line += buf;
  }
  return line + "\n";
}

// Writes one file per vocabulary class (header only when empty). Images are
// emitted in id order and detections in score order.
inline void write_detection_files(const std::filesystem::path& dir, const DetectionsByImage& dets,
                                  const ClassVocabulary& vocab, BoxKind kind) {
  std::filesystem::create_directories(dir);
  for (std::size_t k = 0; k < vocab.size(); ++k) {
    std::ofstream os(dir / detection_file_name(kind, vocab.name(static_cast<int>(k))));
    if (!os) throw Error("cannot write detections to " + dir.string());
    os << detection_header(kind);
    for (const auto& [img, ds] : dets) {
      for (auto i : score_order(ds)) {
        if (static_cast<std::size_t>(ds[i].class_id) == k) os << format_detection(img, ds[i]);
      }
    }
  }
}

inline DetectionsByImage read_detection_files(const std::filesystem::path& dir, const ClassVocabulary& vocab,
                                              BoxKind kind) {
  DetectionsByImage out;
  for (std::size_t k = 0; k < vocab.size(); ++k) {
    const auto path = dir / detection_file_name(kind, vocab.name(static_cast<int>(k)));
    std::ifstream is(path);
    if (!is) continue;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      const auto t = detail::trim(line);
      if (t.empty() || t.front() == '#') continue;
      const auto tok = detail::split_ws(t);
      const std::size_t want = kind == BoxKind::kOBB ? 10 : 6;
      if (tok.size() != want) throw ParseError(path.filename().string() + ": wrong field count", line_no);
      std::vector<double> v(want - 1);
      for (std::size_t i = 1; i < want; ++i) {
        if (!detail::parse_double(tok[i], v[i - 1])) throw ParseError(path.filename().string() + ": bad number", line_no);
      }
      ScoredDetection d;
      d.class_id = static_cast<int>(k);
      d.score = v[0];
      if (kind == BoxKind::kOBB) {
        Quad q;
        for (int i = 0; i < 4; ++i) q.pts[i] = {v[1 + 2 * i], v[2 + 2 * i]};
        d.box = quad_to_obb(q);
      } else {
        d.box = HBB{v[1], v[2], v[3], v[4]};
      }
      out[std::string(tok[0])].push_back(d);
    }
  }
  return out;
}

inline std::string format_report(const EvalResult& r, const ClassVocabulary& vocab, BoxKind kind) {
  std::ostringstream os;
  char buf[256];
  os << "task: " << (kind == BoxKind::kOBB ? "obb" : "hbb") << "\n";
  std::snprintf(buf, sizeof buf, "%-22s %8s %6s %6s %6s %6s\n", "class", "AP", "gt", "tp", "fp", "fn");
  os << buf;
  for (std::size_t k = 0; k < r.classes.size(); ++k) {
    const auto& c = r.classes[k];
    const std::string ap = c.ap ? [&] {
      char b[32];
      std::snprintf(b, sizeof b, "%.4f", *c.ap);
      return std::string(b);
    }()
                                : std::string("-");
    std::snprintf(buf, sizeof buf, "%-22s %8s %6zu %6zu %6zu %6zu\n", vocab.name(static_cast<int>(k)).c_str(),
                  ap.c_str(), c.num_gt, c.true_positives, c.false_positives, c.false_negatives);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%-22s %8.4f\n", "mAP", r.map);
  os << buf;
  return os.str();
}

inline std::string format_report_kv(const EvalResult& r, const ClassVocabulary& vocab) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "mAP = %.6f\n", r.map);
  os << buf;
  for (std::size_t k = 0; k < r.classes.size(); ++k) {
    if (!r.classes[k].ap) continue;
    std::snprintf(buf, sizeof buf, "ap.%s = %.6f\n", vocab.name(static_cast<int>(k)).c_str(), *r.classes[k].ap);
    os << buf;
  }
  return os.str();
}

}  // namespace cadnet
