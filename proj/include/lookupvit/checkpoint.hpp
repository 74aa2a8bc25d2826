#pragma once

// Binary checkpoint: "LVCK", version, model config as JSON, named tensor table,
// crc32 over everything before it. All integers and payloads are little-endian.

#include <cstdio>
#include <map>
#include <string>

#include <zlib.h>

#include "lookupvit/config.hpp"
#include "lookupvit/io.hpp"
#include "lookupvit/model.hpp"

namespace lookupvit {

inline constexpr char kCheckpointMagic[4] = {'L', 'V', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t size) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

/// The tensor table alone: depends only on parameter names, shapes and values.
template <typename T>
void write_tensor_table(io::Writer& w, const ModelParams<T>& params) {
  std::uint32_t count = 0;
  params.visit([&](const std::string&, const Tensor<T>&) { ++count; });
  w.uint(count);
  params.visit([&](const std::string& name, const Tensor<T>& t) {
    w.str(name);
    w.uint(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.uint(static_cast<std::uint64_t>(d));
    w.uint(static_cast<std::uint8_t>(dtype_of<T>()));
    w.uint(static_cast<std::uint64_t>(t.numel() * sizeof(T)));
    for (T v : t.data()) {
      if constexpr (std::is_same_v<T, float>) w.f32(v);
      else w.f64(v);
    }
  });
}

template <typename T>
io::Bytes serialize_params(const ModelParams<T>& params) {
  io::Writer w;
  write_tensor_table(w, params);
  return std::move(w.bytes());
}

template <typename T>
io::Bytes serialize_checkpoint(const ModelConfig& cfg, const ModelParams<T>& params) {
  io::Writer w;
  w.raw(std::string_view(kCheckpointMagic, 4));
  w.uint(kCheckpointVersion);
  w.str(to_json(cfg).dump());
  write_tensor_table(w, params);
  w.uint(crc32_of(w.bytes().data(), w.bytes().size()));
  return std::move(w.bytes());
}

template <typename T>
struct Checkpoint {
  ModelConfig config;
  ModelParams<T> params;
};

/// Reads the model config without touching the tensor table, e.g. to pick the precision.
inline ModelConfig peek_checkpoint_config(const io::Bytes& bytes) {
  io::Reader r(bytes.data(), bytes.size(), "checkpoint");
  if (r.raw(4) != std::string_view(kCheckpointMagic, 4)) throw FormatError("not a checkpoint (bad magic)");
  const auto version = r.uint<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  try {
    return model_config_from_json(nlohmann::json::parse(r.str()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config is invalid: ") + e.what());
  }
}

template <typename T>
Checkpoint<T> deserialize_checkpoint(const io::Bytes& bytes) {
  if (bytes.size() < 12) throw FormatError("checkpoint: truncated");
  const std::size_t body = bytes.size() - 4;
  io::Reader tail(bytes.data() + body, 4, "checkpoint");
  if (tail.uint<std::uint32_t>() != crc32_of(bytes.data(), body)) {
    throw FormatError("checkpoint checksum mismatch");
  }
  Checkpoint<T> ck;
  ck.config = peek_checkpoint_config(bytes);
  ck.params = init_model<T>(ck.config);

  std::map<std::string, Tensor<T>*> slots;
  ck.params.visit([&](const std::string& name, Tensor<T>& t) { slots[name] = &t; });

  io::Reader r(bytes.data(), body, "checkpoint");
  r.skip(8);
  r.str();
  const auto count = r.uint<std::uint32_t>();
  if (count != slots.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, config needs " +
                      std::to_string(slots.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    auto it = slots.find(name);
    if (it == slots.end()) throw FormatError("checkpoint has unexpected tensor " + name);
    Tensor<T>& t = *it->second;
    const auto rank = r.uint<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.uint<std::uint64_t>());
    if (shape != t.shape()) {
      throw FormatError("tensor " + name + " has shape " + shape_str(shape) + ", expected " +
                        shape_str(t.shape()));
    }
    const auto tag = r.uint<std::uint8_t>();
    if (tag != static_cast<std::uint8_t>(dtype_of<T>())) {
      throw FormatError("tensor " + name + " dtype tag " + std::to_string(tag) +
                        " does not match the requested precision");
    }
    if (r.uint<std::uint64_t>() != t.numel() * sizeof(T)) {
      throw FormatError("tensor " + name + " payload size mismatch");
    }
    for (T& v : t.data()) {
      if constexpr (std::is_same_v<T, float>) v = r.f32();
      else v = r.f64();
    }
    slots.erase(it);
  }
  if (r.remaining() != 0) throw FormatError("checkpoint has trailing bytes");
  return ck;
}

template <typename T>
void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ModelParams<T>& params) {
  io::write_file_atomic(path, serialize_checkpoint(cfg, params));
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  return deserialize_checkpoint<T>(io::read_file(path));
}

}  // namespace lookupvit
