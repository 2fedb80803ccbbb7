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

// Versioned binary checkpoints.
//
// Layout (little-endian):
//   "CADNETCK" | u32 version | u32 n_meta | n_meta x (str key, str value)
//   | u32 n_tensors | n_tensors x (str name, u32 rank, rank x i32 dim, f32 data)
// where str is u32 length followed by bytes.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "cadnet/config.hpp"
#include "cadnet/error.hpp"
#include "cadnet/image.hpp"
#include "cadnet/netcore.hpp"
#include "cadnet/tensor.hpp"

namespace cadnet {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'D', 'N', 'E', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  KeyValues meta;
  std::vector<std::pair<std::string, nn::Tensor<float>>> tensors;
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

inline void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw Error("checkpoint truncated");
  return v;
}

inline std::string get_str(std::istream& is) {
  const auto n = get_u32(is);
  if (n > (1u << 20)) throw Error("checkpoint string too long");
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw Error("checkpoint truncated");
  return s;
}

}  // namespace detail

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write checkpoint " + path.string());
    os.write(kCheckpointMagic, 8);
    detail::put_u32(os, kCheckpointVersion);
    detail::put_u32(os, static_cast<std::uint32_t>(ck.meta.entries().size()));
    for (const auto& [k, v] : ck.meta.entries()) {
      detail::put_str(os, k);
      detail::put_str(os, v);
    }
    detail::put_u32(os, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& [name, t] : ck.tensors) {
      detail::put_str(os, name);
      detail::put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
      for (int d : t.shape) detail::put_u32(os, static_cast<std::uint32_t>(d));
      os.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
    }
    if (!os) throw Error("failed writing checkpoint " + path.string());
  }
  fs::rename(tmp, path);
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw Error(path.string() + " is not a cadnet checkpoint");
  }
  const auto version = detail::get_u32(is);
  if (version != kCheckpointVersion) {
    throw Error("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto n_meta = detail::get_u32(is);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = detail::get_str(is);
    ck.meta.set(k, detail::get_str(is));
  }
  const auto n_tensors = detail::get_u32(is);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    auto name = detail::get_str(is);
    const auto rank = detail::get_u32(is);
    if (rank > 8) throw Error("checkpoint tensor rank too large");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(detail::get_u32(is));
    nn::Tensor<float> t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4))) {
      throw Error("checkpoint truncated");
    }
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

inline void put_channel_stats(KeyValues& kv, const ChannelStats& s) {
  kv.set("norm.mean", detail::join(s.mean));
  kv.set("norm.std", detail::join(s.std));
}

inline ChannelStats channel_stats_from(const KeyValues& kv) {
  ChannelStats s;
  const auto m = kv.get_doubles("norm.mean", {s.mean.begin(), s.mean.end()});
  const auto d = kv.get_doubles("norm.std", {s.std.begin(), s.std.end()});
  if (m.size() != 3 || d.size() != 3) throw Error("checkpoint normalization needs 3 channels");
  for (int c = 0; c < 3; ++c) {
    s.mean[c] = m[c];
    s.std[c] = d[c];
  }
  return s;
}

// Snapshot of the parameters plus the model config and any extra metadata.
inline Checkpoint make_checkpoint(const Model<float>& model, KeyValues extra = {}) {
  Checkpoint ck;
  ck.meta = std::move(extra);
  const KeyValues model_kv = model_config_to_kv(model.config());
  for (const auto& [k, v] : model_kv.entries()) ck.meta.set(k, v);
  for (const auto& [name, p] : model.params()) ck.tensors.emplace_back(name, p->value);
  return ck;
}

inline ModelConfig checkpoint_model_config(const Checkpoint& ck) {
  KeyValues kv;
  for (const auto& [k, v] : ck.meta.entries()) {
    if (k.rfind("model.", 0) == 0) kv.set(k, v);
  }
  return model_config_from(kv);
}

// Copies tensors into `model`; the parameter sets must match exactly.
inline void load_parameters(Model<float>& model, const Checkpoint& ck) {
  if (ck.tensors.size() != model.params().size()) {
    throw ShapeError("checkpoint has " + std::to_string(ck.tensors.size()) + " parameter groups, model expects " +
                     std::to_string(model.params().size()));
  }
  for (const auto& [name, t] : ck.tensors) {
    if (!model.has_param(name)) throw ShapeError("checkpoint group '" + name + "' is not in the model");
    model.set_param(name, t);
  }
}

inline Model<float> model_from_checkpoint(const Checkpoint& ck) {
  Model<float> model(checkpoint_model_config(ck), 0);
  load_parameters(model, ck);
  return model;
}

}  // namespace cadnet
