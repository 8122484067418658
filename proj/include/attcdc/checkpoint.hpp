// Copyright 2026 The AttCDC Authors. All Rights Reserved.
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

#ifndef ATTCDC_CHECKPOINT_HPP_
#define ATTCDC_CHECKPOINT_HPP_

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "attcdc/crc32.hpp"
#include "attcdc/model.hpp"
#include "attcdc/optim.hpp"

namespace attcdc {

// On-disk layout, little-endian integers:
//   magic "ACDC" | u32 version | u32 tensor count
//   per tensor: u32 name length | name bytes | u8 dtype | u8 rank |
//               rank * u32 dims | raw payload
//   u32 CRC-32 over every preceding byte
// dtype 0 = f32 tensors; dtype 1 = u8 blob, used for one "__meta__" entry
// holding the model config, epoch cursor and seed as JSON.
constexpr uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[4] = {'A', 'C', 'D', 'C'};

struct Checkpoint {
  uint32_t version = kCheckpointVersion;
  ModelConfig model_config;
  int64_t epoch_cursor = 0;  // completed epochs
  uint64_t seed = 0;
  nlohmann::json extra;  // training-side settings (loss, lr, fractions, ...)
  std::vector<std::pair<std::string, TensorT<float>>> tensors;  // params, buffers, moments
};

namespace detail {

struct ByteSink {
  std::vector<uint8_t> bytes;
  void u8(uint8_t v) { bytes.push_back(v); }
  void u32(uint32_t v) {
    bytes.push_back(static_cast<uint8_t>(v));
    bytes.push_back(static_cast<uint8_t>(v >> 8));
    bytes.push_back(static_cast<uint8_t>(v >> 16));
    bytes.push_back(static_cast<uint8_t>(v >> 24));
  }
  void raw(const void* p, size_t n) {
    const uint8_t* b = static_cast<const uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
};

struct ByteSource {
  const std::vector<uint8_t>& bytes;
  size_t pos = 0;
  const std::string& path;

  void need(size_t n) const {
    if (pos + n > bytes.size()) throw FormatError(path + ": truncated checkpoint");
  }
  uint8_t u8() {
    need(1);
    return bytes[pos++];
  }
  uint32_t u32() {
    need(4);
    uint32_t v = bytes[pos] | (bytes[pos + 1] << 8) | (bytes[pos + 2] << 16) |
                 (static_cast<uint32_t>(bytes[pos + 3]) << 24);
    pos += 4;
    return v;
  }
  const uint8_t* raw(size_t n) {
    need(n);
    const uint8_t* p = bytes.data() + pos;
    pos += n;
    return p;
  }
};

}  // namespace detail

inline std::vector<uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  detail::ByteSink out;
  out.raw(kCheckpointMagic, 4);
  out.u32(ckpt.version);

  nlohmann::json meta{{"model_config", ckpt.model_config.to_json()},
                      {"epoch", ckpt.epoch_cursor},
                      {"seed", ckpt.seed},
                      {"extra", ckpt.extra}};
  const std::string meta_str = meta.dump();

  out.u32(static_cast<uint32_t>(ckpt.tensors.size() + 1));
  // meta blob first
  out.u32(8);
  out.raw("__meta__", 8);
  out.u8(1);  // dtype u8
  out.u8(1);  // rank
  out.u32(static_cast<uint32_t>(meta_str.size()));
  out.raw(meta_str.data(), meta_str.size());

  for (const auto& [name, t] : ckpt.tensors) {
    out.u32(static_cast<uint32_t>(name.size()));
    out.raw(name.data(), name.size());
    out.u8(0);  // dtype f32
    out.u8(static_cast<uint8_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) out.u32(static_cast<uint32_t>(t.dim(d)));
    out.raw(t.data(), static_cast<size_t>(t.size()) * sizeof(float));
  }
  const uint32_t crc = crc32(out.bytes.data(), out.bytes.size());
  out.u32(crc);
  return std::move(out.bytes);
}

inline Checkpoint parse_checkpoint(const std::vector<uint8_t>& bytes, const std::string& path) {
  if (bytes.size() < 16) throw FormatError(path + ": truncated checkpoint");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError(path + ": bad checkpoint magic");
  }
  const uint32_t stored_crc = bytes[bytes.size() - 4] | (bytes[bytes.size() - 3] << 8) |
                              (bytes[bytes.size() - 2] << 16) |
                              (static_cast<uint32_t>(bytes[bytes.size() - 1]) << 24);
  if (crc32(bytes.data(), bytes.size() - 4) != stored_crc) {
    throw FormatError(path + ": checkpoint CRC mismatch");
  }

  detail::ByteSource in{bytes, 4, path};
  Checkpoint ckpt;
  ckpt.version = in.u32();
  if (ckpt.version != kCheckpointVersion) {
    throw VersionError(path + ": unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  const uint32_t count = in.u32();
  bool meta_seen = false;
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = in.u32();
    const uint8_t* name_p = in.raw(name_len);
    std::string name(reinterpret_cast<const char*>(name_p), name_len);
    const uint8_t dtype = in.u8();
    const uint8_t rank = in.u8();
    std::vector<int> dims(rank);
    size_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      dims[static_cast<size_t>(d)] = static_cast<int>(in.u32());
      numel *= static_cast<size_t>(dims[static_cast<size_t>(d)]);
    }
    if (dtype == 1) {
      const uint8_t* blob = in.raw(numel);
      if (name != "__meta__") throw FormatError(path + ": unexpected blob tensor " + name);
      nlohmann::json meta = nlohmann::json::parse(blob, blob + numel, nullptr, false);
      if (meta.is_discarded()) throw FormatError(path + ": malformed checkpoint metadata");
      ckpt.model_config = ModelConfig::from_json(meta.at("model_config"));
      ckpt.epoch_cursor = meta.at("epoch").get<int64_t>();
      ckpt.seed = meta.at("seed").get<uint64_t>();
      ckpt.extra = meta.value("extra", nlohmann::json::object());
      meta_seen = true;
    } else if (dtype == 0) {
      const uint8_t* payload = in.raw(numel * sizeof(float));
      TensorT<float> t(dims);
      std::memcpy(t.data(), payload, numel * sizeof(float));
      ckpt.tensors.emplace_back(std::move(name), std::move(t));
    } else {
      throw FormatError(path + ": unknown dtype code " + std::to_string(dtype));
    }
  }
  if (!meta_seen) throw FormatError(path + ": checkpoint metadata missing");
  return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::vector<uint8_t> bytes = serialize_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short checkpoint write: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes, path);
}

/// Snapshot of model parameters, batchnorm statistics and, optionally, the
/// optimizer moments plus step counter.
inline Checkpoint make_checkpoint(Model& model, Adam* optimizer, int64_t epoch_cursor,
                                  uint64_t seed, nlohmann::json extra = {}) {
  Checkpoint ckpt;
  ckpt.model_config = model.config();
  ckpt.epoch_cursor = epoch_cursor;
  ckpt.seed = seed;
  ckpt.extra = std::move(extra);
  model.visit([&ckpt](const std::string& name, Tensor& t, bool) {
    ckpt.tensors.emplace_back(name, t.clone());
  });
  if (optimizer) {
    for (auto& [name, t] : optimizer->named_state()) ckpt.tensors.emplace_back(name, t->clone());
    TensorT<float> step({1});
    step[0] = static_cast<float>(optimizer->step_count());
    ckpt.tensors.emplace_back("opt.step", std::move(step));
  }
  return ckpt;
}

/// Restores model (and optimizer) tensors by name. Every destination tensor
/// must be present with a matching shape.
inline void apply_checkpoint(const Checkpoint& ckpt, Model& model, Adam* optimizer) {
  if (!(ckpt.model_config == model.config())) {
    throw MismatchError("checkpoint model configuration does not match the target model");
  }
  std::map<std::string, const TensorT<float>*> stored;
  for (const auto& [name, t] : ckpt.tensors) stored[name] = &t;

  auto restore = [&stored](const std::string& name, TensorT<float>& dst) {
    auto it = stored.find(name);
    if (it == stored.end()) throw MismatchError("checkpoint is missing tensor '" + name + "'");
    if (!(it->second->shape() == dst.shape())) {
      throw MismatchError("checkpoint tensor '" + name + "' has shape " +
                          it->second->shape_string() + ", model expects " + dst.shape_string());
    }
    std::copy(it->second->data(), it->second->data() + dst.size(), dst.data());
  };

  model.visit([&restore](const std::string& name, Tensor& t, bool) { restore(name, t); });
  if (optimizer) {
    for (auto& [name, t] : optimizer->named_state()) restore(name, *t);
    auto it = stored.find("opt.step");
    if (it == stored.end()) throw MismatchError("checkpoint is missing optimizer step counter");
    optimizer->set_step_count(static_cast<int64_t>((*it->second)[0]));
  }
}

}  // namespace attcdc

#endif  // ATTCDC_CHECKPOINT_HPP_
