// Copyright 2026 The harr Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Versioned binary container of named arrays.
//
//   "HARR" | u32 version | u32 count | count x record
//   record: u32 name_len | name | u8 dtype | u32 ndim | ndim x u64 dim | payload
//
// All integers and floats are little-endian. Payload length is implied by the
// dtype width times the product of the dims.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "harr/autodiff.hpp"
#include "harr/error.hpp"

namespace harr {

inline constexpr char kCheckpointMagic[4] = {'H', 'A', 'R', 'R'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { kF64 = 0, kF32 = 1, kU64 = 2, kU8 = 3 };

inline std::size_t dtype_width(DType t) {
  switch (t) {
    case DType::kF64: return 8;
    case DType::kF32: return 4;
    case DType::kU64: return 8;
    case DType::kU8: return 1;
  }
  throw DataError("unknown dtype tag");
}

struct NamedArray {
  DType dtype = DType::kF64;
  std::vector<std::uint64_t> shape;
  std::vector<std::uint8_t> payload;  // little-endian element bytes

  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

namespace detail {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

/// Ordered name -> array map with the on-disk encoding above.
class Checkpoint {
 public:
  void put(const std::string& name, NamedArray a) { arrays_[name] = std::move(a); }

  void put_f64(const std::string& name, const Array& a) {
    NamedArray na{DType::kF64, {a.rows(), a.cols()}, {}};
    na.payload.reserve(a.size() * 8);
    for (double x : a.data()) detail::put_le(na.payload, std::bit_cast<std::uint64_t>(x));
    put(name, std::move(na));
  }

  /// Reduced-precision copy for size; not used for state that must round-trip.
  void put_f32(const std::string& name, const Array& a) {
    NamedArray na{DType::kF32, {a.rows(), a.cols()}, {}};
    for (double x : a.data()) detail::put_le(na.payload, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
    put(name, std::move(na));
  }

  void put_u64(const std::string& name, std::uint64_t v) {
    NamedArray na{DType::kU64, {1}, {}};
    detail::put_le(na.payload, v);
    put(name, std::move(na));
  }

  void put_bytes(const std::string& name, const std::string& bytes) {
    put(name, NamedArray{DType::kU8, {bytes.size()}, std::vector<std::uint8_t>(bytes.begin(), bytes.end())});
  }

  bool contains(const std::string& name) const { return arrays_.count(name) != 0; }

  const NamedArray& get(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw DataError("checkpoint: missing array '" + name + "'");
    return it->second;
  }

  Array get_f64(const std::string& name) const {
    const auto& na = get(name);
    if (na.shape.size() != 2) throw DataError("checkpoint: '" + name + "' is not a matrix");
    Array a(na.shape[0], na.shape[1]);
    if (na.dtype == DType::kF64) {
      for (std::size_t i = 0; i < a.size(); ++i)
        a[i] = std::bit_cast<double>(detail::get_le<std::uint64_t>(&na.payload[i * 8]));
    } else if (na.dtype == DType::kF32) {
      for (std::size_t i = 0; i < a.size(); ++i)
        a[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(&na.payload[i * 4]));
    } else {
      throw DataError("checkpoint: '" + name + "' is not floating point");
    }
    return a;
  }

  std::uint64_t get_u64(const std::string& name) const {
    const auto& na = get(name);
    if (na.dtype != DType::kU64 || na.payload.size() != 8) throw DataError("checkpoint: '" + name + "' is not u64");
    return detail::get_le<std::uint64_t>(na.payload.data());
  }

  std::string get_bytes(const std::string& name) const {
    const auto& na = get(name);
    if (na.dtype != DType::kU8) throw DataError("checkpoint: '" + name + "' is not a byte array");
    return std::string(na.payload.begin(), na.payload.end());
  }

  const std::map<std::string, NamedArray>& arrays() const noexcept { return arrays_; }

  std::vector<std::uint8_t> serialize() const {
    std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
    detail::put_le(out, kCheckpointVersion);
    detail::put_le(out, static_cast<std::uint32_t>(arrays_.size()));
    for (const auto& [name, a] : arrays_) {
      detail::put_le(out, static_cast<std::uint32_t>(name.size()));
      out.insert(out.end(), name.begin(), name.end());
      out.push_back(static_cast<std::uint8_t>(a.dtype));
      detail::put_le(out, static_cast<std::uint32_t>(a.shape.size()));
      for (auto d : a.shape) detail::put_le(out, d);
      out.insert(out.end(), a.payload.begin(), a.payload.end());
    }
    return out;
  }

  static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes) {
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
      if (bytes.size() - pos < n) throw DataError("checkpoint: truncated");
    };
    need(12);
    if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw DataError("checkpoint: bad magic");
    pos = 4;
    const auto version = detail::get_le<std::uint32_t>(&bytes[pos]);
    pos += 4;
    if (version != kCheckpointVersion) {
      throw DataError("checkpoint: unsupported format version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
    }
    const auto count = detail::get_le<std::uint32_t>(&bytes[pos]);
    pos += 4;
    Checkpoint c;
    for (std::uint32_t i = 0; i < count; ++i) {
      need(4);
      const auto name_len = detail::get_le<std::uint32_t>(&bytes[pos]);
      pos += 4;
      need(name_len + 5);
      std::string name(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                       bytes.begin() + static_cast<std::ptrdiff_t>(pos + name_len));
      pos += name_len;
      NamedArray a;
      const auto tag = bytes[pos++];
      if (tag > static_cast<std::uint8_t>(DType::kU8)) throw DataError("checkpoint: unknown dtype tag");
      a.dtype = static_cast<DType>(tag);
      const auto ndim = detail::get_le<std::uint32_t>(&bytes[pos]);
      pos += 4;
      need(std::size_t{ndim} * 8);
      std::uint64_t elems = 1;
      for (std::uint32_t d = 0; d < ndim; ++d) {
        a.shape.push_back(detail::get_le<std::uint64_t>(&bytes[pos]));
        elems *= a.shape.back();
        pos += 8;
      }
      const std::size_t len = elems * dtype_width(a.dtype);
      need(len);
      a.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                       bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
      pos += len;
      c.arrays_.emplace(std::move(name), std::move(a));
    }
    if (pos != bytes.size()) throw DataError("checkpoint: trailing bytes");
    return c;
  }

  void save(const std::string& path) const {
    const auto bytes = serialize();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for checkpoint " + path);
  }

  static Checkpoint load(const std::string& path) { return deserialize(read_file_bytes(path)); }

  static std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

 private:
  std::map<std::string, NamedArray> arrays_;
};

/// 64-bit FNV-1a, used as a content fingerprint for persisted files.
inline std::uint64_t fnv1a64(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

}  // namespace harr
