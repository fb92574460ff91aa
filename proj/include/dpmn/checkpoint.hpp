#pragma once

// Named-tensor container file.
//
//   magic   "DPMNCKPT" (8 bytes)
//   u32     format version (1)
//   u32     entry count
//   entry:  u32 name length, name bytes (UTF-8),
//           u32 rank, u64 dims[rank],
//           f64 values[prod(dims)]
//
// All integers and floats little-endian.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dpmn/autograd.hpp"
#include "dpmn/error.hpp"

namespace dpmn::ag {

inline constexpr char kCheckpointMagic[8] = {'D', 'P', 'M', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw InputError("checkpoint: truncated file");
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  pos += sizeof(T);
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace detail

inline std::string encode_checkpoint(const std::vector<NamedTensor>& entries) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.values.size() != numel(e.shape)) throw std::invalid_argument("checkpoint: entry '" + e.name + "' has inconsistent shape");
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) detail::put_le<std::uint64_t>(out, d);
    for (double v : e.values) detail::put_le<double>(out, v);
  }
  return out;
}

inline std::vector<NamedTensor> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) || std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw InputError("checkpoint: bad magic");
  }
  std::size_t pos = sizeof(kCheckpointMagic);
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) throw InputError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = detail::get_le<std::uint32_t>(bytes, pos);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor e;
    const auto len = detail::get_le<std::uint32_t>(bytes, pos);
    if (pos + len > bytes.size()) throw InputError("checkpoint: truncated name");
    e.name.assign(bytes.data() + pos, len);
    pos += len;
    const auto rank = detail::get_le<std::uint32_t>(bytes, pos);
    for (std::uint32_t d = 0; d < rank; ++d) e.shape.push_back(detail::get_le<std::uint64_t>(bytes, pos));
    const std::size_t n = numel(e.shape);
    if (n > (bytes.size() - pos) / sizeof(double)) throw InputError("checkpoint: truncated values for '" + e.name + "'");
    e.values.resize(n);
    for (auto& v : e.values) v = detail::get_le<double>(bytes, pos);
    out.push_back(std::move(e));
  }
  if (pos != bytes.size()) throw InputError("checkpoint: trailing bytes");
  return out;
}

inline std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("checkpoint: cannot open '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace dpmn::ag
