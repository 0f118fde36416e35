#pragma once

// Checkpoint container: magic "CSWM", u32 format version, u64 manifest length,
// JSON manifest (embedded model config plus tensor names/shapes/dtypes/
// offsets), then raw float32 payloads. All integers and floats are little
// endian regardless of host. Loading a file written on any supported host is
// bit-exact.

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "cswm/config.hpp"
#include "cswm/tensor.hpp"

namespace cswm {

namespace detail {

constexpr uint32_t kCheckpointVersion = 1;

inline bool host_little_endian() {
  uint16_t probe = 1;
  unsigned char b;
  std::memcpy(&b, &probe, 1);
  return b == 1;
}

inline void put_u32_le(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64_le(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline uint32_t get_u32_le(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
inline uint64_t get_u64_le(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline void append_f32_le(std::string& out, const float* data, int64_t n) {
  if (host_little_endian()) {
    out.append(reinterpret_cast<const char*>(data), static_cast<size_t>(n) * 4);
    return;
  }
  for (int64_t i = 0; i < n; ++i) {
    uint32_t bits;
    std::memcpy(&bits, &data[i], 4);
    put_u32_le(out, bits);
  }
}

inline void read_f32_le(const unsigned char* src, float* dst, int64_t n) {
  if (host_little_endian()) {
    std::memcpy(dst, src, static_cast<size_t>(n) * 4);
    return;
  }
  for (int64_t i = 0; i < n; ++i) {
    uint32_t bits = get_u32_le(src + i * 4);
    std::memcpy(&dst[i], &bits, 4);
  }
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw FormatError("cannot open '" + path + "' for writing");
  size_t n = std::fwrite(bytes.data(), 1, bytes.size(), f);
  bool ok = (n == bytes.size()) && std::fclose(f) == 0;
  if (!ok) throw FormatError("short write to '" + path + "'");
}

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw FormatError("cannot open '" + path + "'");
  std::fseek(f, 0, SEEK_END);
  long size = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<unsigned char> bytes(static_cast<size_t>(size));
  size_t n = size > 0 ? std::fread(bytes.data(), 1, bytes.size(), f) : 0;
  std::fclose(f);
  if (n != bytes.size()) throw FormatError("short read from '" + path + "'");
  return bytes;
}

}  // namespace detail

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

inline void write_checkpoint(const std::string& path, const Json& model_config,
                             const std::vector<NamedTensor>& tensors) {
  Json manifest;
  manifest["model_config"] = model_config;
  Json list = Json::array();
  uint64_t offset = 0;
  for (const NamedTensor& nt : tensors) {
    Json e;
    e["name"] = nt.name;
    e["shape"] = nt.tensor.shape();
    e["dtype"] = "f32";
    e["offset"] = offset;
    uint64_t nbytes = static_cast<uint64_t>(nt.tensor.numel()) * 4;
    e["nbytes"] = nbytes;
    offset += nbytes;
    list.push_back(std::move(e));
  }
  manifest["tensors"] = std::move(list);
  std::string mjson = manifest.dump();

  std::string out;
  out.reserve(16 + mjson.size() + offset);
  out += "CSWM";
  detail::put_u32_le(out, detail::kCheckpointVersion);
  detail::put_u64_le(out, mjson.size());
  out += mjson;
  for (const NamedTensor& nt : tensors)
    detail::append_f32_le(out, nt.tensor.data(), nt.tensor.numel());
  detail::write_file(path, out);
}

struct Checkpoint {
  Json model_config;
  std::map<std::string, Tensor> tensors;

  const Tensor& require(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw FormatError("checkpoint is missing tensor '" + name + "'");
    return it->second;
  }
};

inline Checkpoint read_checkpoint(const std::string& path) {
  std::vector<unsigned char> bytes = detail::read_file(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "CSWM", 4) != 0)
    throw FormatError("'" + path + "' is not a checkpoint (bad magic)");
  uint32_t version = detail::get_u32_le(bytes.data() + 4);
  if (version != detail::kCheckpointVersion)
    throw FormatError(detail::msg_cat("unsupported checkpoint version ", version));
  uint64_t mlen = detail::get_u64_le(bytes.data() + 8);
  if (16 + mlen > bytes.size()) throw FormatError("checkpoint manifest is truncated");

  Json manifest;
  try {
    manifest = Json::parse(bytes.begin() + 16, bytes.begin() + 16 + mlen);
  } catch (const Json::exception& e) {
    throw FormatError(detail::msg_cat("corrupt checkpoint manifest: ", e.what()));
  }

  Checkpoint ckpt;
  ckpt.model_config = manifest.at("model_config");
  uint64_t payload_start = 16 + mlen;
  uint64_t payload_size = bytes.size() - payload_start;
  uint64_t expected = 0;
  for (const Json& e : manifest.at("tensors")) {
    std::string name = e.at("name").get<std::string>();
    Shape shape = e.at("shape").get<Shape>();
    std::string dtype = e.at("dtype").get<std::string>();
    if (dtype != "f32")
      throw FormatError("unsupported dtype '" + dtype + "' for tensor '" + name + "'");
    uint64_t offset = e.at("offset").get<uint64_t>();
    uint64_t nbytes = e.at("nbytes").get<uint64_t>();
    int64_t numel = shape_numel(shape);
    if (nbytes != static_cast<uint64_t>(numel) * 4)
      throw FormatError("size mismatch for tensor '" + name + "'");
    if (offset + nbytes > payload_size)
      throw FormatError("payload overrun for tensor '" + name + "'");
    expected = std::max(expected, offset + nbytes);
    Tensor t = Tensor::zeros(shape);
    detail::read_f32_le(bytes.data() + payload_start + offset, t.data(), numel);
    if (!ckpt.tensors.emplace(std::move(name), std::move(t)).second)
      throw FormatError("duplicate tensor name in checkpoint");
  }
  if (expected != payload_size)
    throw FormatError(detail::msg_cat("checkpoint payload has ", payload_size,
                                      " bytes but manifest covers ", expected));
  return ckpt;
}

}  // namespace cswm
