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

// Annotation parsing (DOTA quadrilateral labels, NWPU VHR-10 boxes), class
// vocabularies and dataset indexing / splitting.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "cadnet/error.hpp"
#include "cadnet/geometry.hpp"
#include "cadnet/random.hpp"

namespace cadnet {

class ClassVocabulary {
 public:
  ClassVocabulary() = default;
  explicit ClassVocabulary(std::vector<std::string> names) : names_(std::move(names)) {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (!ids_.emplace(names_[i], static_cast<int>(i)).second) {
        throw Error("duplicate class name '" + names_[i] + "'");
      }
    }
  }

  static ClassVocabulary dota() {
    return ClassVocabulary({"plane", "baseball-diamond", "bridge", "ground-track-field",
                            "small-vehicle", "large-vehicle", "ship", "tennis-court",
                            "basketball-court", "storage-tank", "soccer-ball-field",
                            "roundabout", "harbor", "swimming-pool", "helicopter"});
  }

  static ClassVocabulary nwpu() {
    return ClassVocabulary({"airplane", "ship", "storage-tank", "baseball-diamond",
                            "tennis-court", "basketball-court", "ground-track-field",
                            "harbor", "bridge", "vehicle"});
  }

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

  const std::string& name(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= names_.size()) {
      throw UnknownClassError("class id " + std::to_string(id) + " out of range");
    }
    return names_[static_cast<std::size_t>(id)];
  }

  std::optional<int> find(std::string_view name) const {
    auto it = ids_.find(std::string(name));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  int id(std::string_view name) const {
    if (auto v = find(name)) return *v;
    throw UnknownClassError("unknown class '" + std::string(name) + "'");
  }

 private:
  std::vector<std::string> names_;
  std::map<std::string, int, std::less<>> ids_;
};

using Shape = std::variant<Quad, HBB>;

struct AnnotatedObject {
  Shape shape;
  int class_id = 0;
  bool difficult = false;
};

inline bool is_quad(const AnnotatedObject& o) { return std::holds_alternative<Quad>(o.shape); }

inline HBB shape_hbb(const Shape& s) {
  if (const auto* q = std::get_if<Quad>(&s)) return quad_to_hbb(*q);
  return std::get<HBB>(s);
}

inline Point shape_center(const Shape& s) {
  if (const auto* q = std::get_if<Quad>(&s)) {
    Point c{};
    for (const Point& p : q->pts) c = c + p;
    return 0.25 * c;
  }
  return std::get<HBB>(s).center();
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n\v\f";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline bool parse_double(std::string_view tok, double& out) {
  std::string s(tok);
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return !s.empty() && end == s.c_str() + s.size() && std::isfinite(out);
}

inline bool parse_int(std::string_view tok, long& out) {
  std::string s(tok);
  char* end = nullptr;
  out = std::strtol(s.c_str(), &end, 10);
  return !s.empty() && end == s.c_str() + s.size();
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::size_t end = nl == std::string_view::npos ? text.size() : nl;
    ++line_no;
    fn(text.substr(pos, end - pos), line_no);
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
}

inline std::string fmt1(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  // Avoid "-0.0" so formatting is a function of the rounded value.
  if (std::string_view(buf) == "-0.0") return "0.0";
  return buf;
}

}  // namespace detail

// DOTA label text: optional "imagesource:" / "gsd:" header lines, then
// "x1 y1 x2 y2 x3 y3 x4 y4 category difficult" per object.
inline std::vector<AnnotatedObject> parse_dota_annotation(std::string_view text,
                                                          const ClassVocabulary& vocab) {
  std::vector<AnnotatedObject> out;
  detail::for_each_line(text, [&](std::string_view raw, int line_no) {
    const auto line = detail::trim(raw);
    if (line.empty()) return;
    if (line.starts_with("imagesource") || line.starts_with("gsd")) return;
    const auto tok = detail::split_ws(line);
    if (tok.size() != 9 && tok.size() != 10) {
      throw ParseError("expected 8 coordinates, a category and a difficult flag", line_no);
    }
    Quad q;
    for (std::size_t i = 0; i < 4; ++i) {
      if (!detail::parse_double(tok[2 * i], q.pts[i].x) ||
          !detail::parse_double(tok[2 * i + 1], q.pts[i].y)) {
        throw ParseError("bad coordinate", line_no);
      }
    }
    AnnotatedObject obj;
    const auto cls = vocab.find(tok[8]);
    if (!cls) {
      throw UnknownClassError("line " + std::to_string(line_no) + ": unknown class '" +
                              std::string(tok[8]) + "'");
    }
    obj.class_id = *cls;
    if (tok.size() == 10) {
      long d = 0;
      if (!detail::parse_int(tok[9], d) || (d != 0 && d != 1)) {
        throw ParseError("difficult flag must be 0 or 1", line_no);
      }
      obj.difficult = d == 1;
    }
    try {
      (void)quad_to_obb(q);
    } catch (const DegenerateQuadError& e) {
      throw DegenerateQuadError("line " + std::to_string(line_no) + ": " + e.what());
    }
    obj.shape = q;
    out.push_back(obj);
  });
  return out;
}

inline std::string serialize_dota_annotation(const std::vector<AnnotatedObject>& objects,
                                             const ClassVocabulary& vocab) {
  std::string out;
  for (const auto& o : objects) {
    const Quad q = is_quad(o) ? std::get<Quad>(o.shape) : hbb_to_quad(std::get<HBB>(o.shape));
    for (const Point& p : q.pts) {
      out += detail::fmt1(p.x) + ' ' + detail::fmt1(p.y) + ' ';
    }
    out += vocab.name(o.class_id);
    out += o.difficult ? " 1\n" : " 0\n";
  }
  return out;
}

// NWPU VHR-10 label text: "(x1,y1),(x2,y2),c" per line, c in [1, 10].
inline std::vector<AnnotatedObject> parse_nwpu_annotation(std::string_view text,
                                                          const ClassVocabulary& vocab) {
  std::vector<AnnotatedObject> out;
  detail::for_each_line(text, [&](std::string_view raw, int line_no) {
    const auto line = detail::trim(raw);
    if (line.empty()) return;
    std::string compact;
    for (char c : line) {
      if (!std::isspace(static_cast<unsigned char>(c))) compact += c;
    }
    std::vector<std::string_view> fields;
    std::string_view rest = compact;
    auto take_pair = [&](double& a, double& b) {
      if (rest.empty() || rest.front() != '(') return false;
      const auto close = rest.find(')');
      if (close == std::string_view::npos) return false;
      const auto inner = rest.substr(1, close - 1);
      const auto comma = inner.find(',');
      if (comma == std::string_view::npos) return false;
      if (!detail::parse_double(inner.substr(0, comma), a) ||
          !detail::parse_double(inner.substr(comma + 1), b)) {
        return false;
      }
      rest = rest.substr(close + 1);
      if (rest.empty() || rest.front() != ',') return false;
      rest = rest.substr(1);
      return true;
    };
    double x1, y1, x2, y2;
    if (!take_pair(x1, y1) || !take_pair(x2, y2)) {
      throw ParseError("expected \"(x1,y1),(x2,y2),c\"", line_no);
    }
    long c = 0;
    if (!detail::parse_int(rest, c)) throw ParseError("bad class index", line_no);
    if (c < 1 || c > static_cast<long>(vocab.size())) {
      throw UnknownClassError("line " + std::to_string(line_no) + ": class index " +
                              std::to_string(c) + " outside [1, " +
                              std::to_string(vocab.size()) + "]");
    }
    AnnotatedObject obj;
    obj.shape = HBB{std::min(x1, x2), std::min(y1, y2), std::max(x1, x2), std::max(y1, y2)};
    obj.class_id = static_cast<int>(c - 1);
    out.push_back(obj);
  });
  return out;
}

inline std::string serialize_nwpu_annotation(const std::vector<AnnotatedObject>& objects) {
  std::string out;
  for (const auto& o : objects) {
    const HBB h = shape_hbb(o.shape);
    out += "(" + detail::fmt1(h.xmin) + "," + detail::fmt1(h.ymin) + "),(" +
           detail::fmt1(h.xmax) + "," + detail::fmt1(h.ymax) + ")," +
           std::to_string(o.class_id + 1) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset index

enum class Split { kTrain, kVal, kTest };

struct DatasetRecord {
  std::filesystem::path image;
  std::filesystem::path annotation;
  int width = 0;
  int height = 0;

  std::string id() const { return image.stem().string(); }
};

struct DatasetIndex {
  std::vector<DatasetRecord> records;
  Split split = Split::kTrain;
};

using SizeProbe = std::function<std::pair<int, int>(const std::filesystem::path&)>;

// Pairs every image in `image_dir` with `<label_dir>/<stem>.txt`. Images
// without a label file are skipped; records come back sorted by id.
inline DatasetIndex load_dataset_index(const std::filesystem::path& image_dir,
                                       const std::filesystem::path& label_dir, Split split,
                                       const SizeProbe& probe) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(image_dir)) throw Error("image directory not found: " + image_dir.string());
  DatasetIndex index;
  index.split = split;
  for (const auto& entry : fs::directory_iterator(image_dir)) {
    if (!entry.is_regular_file()) continue;
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext != ".png" && ext != ".jpg" && ext != ".jpeg" && ext != ".bmp" && ext != ".tif" &&
        ext != ".tiff") {
      continue;
    }
    DatasetRecord rec;
    rec.image = entry.path();
    rec.annotation = label_dir / (entry.path().stem().string() + ".txt");
    if (!fs::exists(rec.annotation)) continue;
    const auto [w, h] = probe(rec.image);
    if (w <= 0 || h <= 0) throw Error("unreadable image: " + rec.image.string());
    rec.width = w;
    rec.height = h;
    index.records.push_back(std::move(rec));
  }
  std::sort(index.records.begin(), index.records.end(),
            [](const DatasetRecord& a, const DatasetRecord& b) { return a.id() < b.id(); });
  return index;
}

// Seeded random split; the train side gets floor(fraction * n) records.
inline std::pair<DatasetIndex, DatasetIndex> split_nwpu(const DatasetIndex& index,
                                                        double train_fraction,
                                                        std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error("train_fraction must lie in (0, 1)");
  }
  const std::size_t n = index.records.size();
  const auto n_train = static_cast<std::size_t>(
      std::floor(train_fraction * static_cast<double>(n) + 1e-9));
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(seed);
  rng.shuffle(perm);
  std::vector<std::size_t> train_ids(perm.begin(), perm.begin() + static_cast<long>(n_train));
  std::vector<std::size_t> test_ids(perm.begin() + static_cast<long>(n_train), perm.end());
  std::sort(train_ids.begin(), train_ids.end());
  std::sort(test_ids.begin(), test_ids.end());
  DatasetIndex train{{}, Split::kTrain}, test{{}, Split::kTest};
  for (auto i : train_ids) train.records.push_back(index.records[i]);
  for (auto i : test_ids) test.records.push_back(index.records[i]);
  return {std::move(train), std::move(test)};
}

}  // namespace cadnet
