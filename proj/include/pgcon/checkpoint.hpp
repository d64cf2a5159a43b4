#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "pgcon/common.hpp"

namespace pgcon {

// Checkpoint container ("PGCW"): little-endian, version 1.
//   magic "PGCW" | u32 version | u32 tensor_count
//   per tensor: u16 name_len | name | u8 dtype | u8 rank | u64 extents... | payload
// dtype tags: 0 = f32, 1 = f64, 2 = u64.
enum class CkptDType : std::uint8_t { f32 = 0, f64 = 1, u64 = 2 };

inline std::size_t dtype_size(CkptDType t) {
  switch (t) {
    case CkptDType::f32: return 4;
    case CkptDType::f64: return 8;
    case CkptDType::u64: return 8;
  }
  throw IoError("checkpoint: unknown dtype tag");
}

struct CkptTensor {
  CkptDType dtype = CkptDType::f32;
  std::vector<std::uint64_t> extents;
  std::vector<std::uint8_t> payload;

  std::size_t numel() const {
    return std::accumulate(extents.begin(), extents.end(), std::uint64_t{1},
                           std::multiplies<>());
  }

  template <typename T>
  static CkptTensor from_values(const T* values, std::size_t count,
                                std::vector<std::uint64_t> extents_in) {
    CkptTensor t;
    if constexpr (std::is_same_v<T, float>) t.dtype = CkptDType::f32;
    else if constexpr (std::is_same_v<T, double>) t.dtype = CkptDType::f64;
    else if constexpr (std::is_same_v<T, std::uint64_t>) t.dtype = CkptDType::u64;
    else static_assert(sizeof(T) == 0, "unsupported checkpoint element type");
    t.extents = std::move(extents_in);
    t.payload.resize(count * sizeof(T));
    std::memcpy(t.payload.data(), values, t.payload.size());
    return t;
  }

  template <typename T>
  std::vector<T> to_values() const {
    constexpr CkptDType expect = std::is_same_v<T, float>    ? CkptDType::f32
                                 : std::is_same_v<T, double> ? CkptDType::f64
                                                             : CkptDType::u64;
    if (dtype != expect) throw IoError("checkpoint: tensor dtype mismatch");
    std::vector<T> out(numel());
    if (payload.size() != out.size() * sizeof(T))
      throw IoError("checkpoint: payload size mismatch");
    std::memcpy(out.data(), payload.data(), payload.size());
    return out;
  }
};

// Name -> tensor, ordered; map iteration keeps files byte-stable.
using CkptMap = std::map<std::string, CkptTensor>;

namespace detail {

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError(std::string("truncated checkpoint while reading ") + what);
  return v;
}

}  // namespace detail

inline constexpr char kCkptMagic[4] = {'P', 'G', 'C', 'W'};
inline constexpr std::uint32_t kCkptVersion = 1;

inline void save_checkpoint(const std::string& path, const CkptMap& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kCkptMagic, 4);
  detail::write_pod(os, kCkptVersion);
  detail::write_pod(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    require(name.size() <= 0xFFFF, "checkpoint: tensor name too long");
    detail::write_pod(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod(os, static_cast<std::uint8_t>(t.dtype));
    detail::write_pod(os, static_cast<std::uint8_t>(t.extents.size()));
    for (std::uint64_t e : t.extents) detail::write_pod(os, e);
    require(t.payload.size() == t.numel() * dtype_size(t.dtype),
            "checkpoint: payload/extents mismatch for " + name);
    os.write(reinterpret_cast<const char*>(t.payload.data()),
             static_cast<std::streamsize>(t.payload.size()));
  }
  if (!os) throw IoError("checkpoint write failed: " + path);
}

// Loads the whole file or throws; never returns partial state.
inline CkptMap load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw IoError(std::string("bad checkpoint magic: expected \"PGCW\", got \"") +
                  std::string(magic, is ? 4 : 0) + "\"");
  const auto version = detail::read_pod<std::uint32_t>(is, "version");
  if (version != kCkptVersion)
    throw IoError("unsupported checkpoint version: got " + std::to_string(version) +
                  ", expected " + std::to_string(kCkptVersion));
  const auto count = detail::read_pod<std::uint32_t>(is, "tensor count");
  CkptMap out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_pod<std::uint16_t>(is, "name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw IoError("truncated checkpoint while reading tensor name");
    CkptTensor t;
    const auto dtype = detail::read_pod<std::uint8_t>(is, "dtype");
    if (dtype > 2) throw IoError("checkpoint: unknown dtype tag " + std::to_string(dtype));
    t.dtype = static_cast<CkptDType>(dtype);
    const auto rank = detail::read_pod<std::uint8_t>(is, "rank");
    t.extents.resize(rank);
    for (auto& e : t.extents) e = detail::read_pod<std::uint64_t>(is, "extent");
    t.payload.resize(t.numel() * dtype_size(t.dtype));
    is.read(reinterpret_cast<char*>(t.payload.data()),
            static_cast<std::streamsize>(t.payload.size()));
    if (!is) throw IoError("truncated checkpoint while reading payload of " + name);
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace pgcon
