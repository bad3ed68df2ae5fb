#pragma once

#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "metarefine/error.hpp"
#include "metarefine/flow/flow.hpp"

namespace metarefine::flow {

// Model file layout (all integers little-endian, doubles as IEEE-754 binary64
// bit patterns stored little-endian):
//
//   offset  size  field
//   0       8     magic "MRNFLOW\0"
//   8       4     u32 format version (= 1)
//   12      4     u32 reserved (= 0)
//   16      8     u64 dim
//   24      8     u64 n_blocks
//   32      8     u64 hidden
//   40      8     f64 clamp
//   48      8     u64 n_params
//   56      8*n   f64 params[n_params]
//   56+8n   4     u32 CRC-32 (zlib polynomial) of bytes [0, 56+8n)
inline constexpr std::array<char, 8> kModelMagic{'M', 'R', 'N', 'F', 'L', 'O', 'W', '\0'};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

inline void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
inline void put_u64(std::vector<unsigned char>& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
inline void put_f64(std::vector<unsigned char>& b, double v) { put_u64(b, std::bit_cast<std::uint64_t>(v)); }

inline std::uint64_t get_u(const std::vector<unsigned char>& b, std::size_t off, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b[off + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(::crc32(c, data, static_cast<uInt>(n)));
}

}  // namespace detail

inline std::vector<unsigned char> serialize(const FlowModel& m) {
  std::vector<unsigned char> b;
  b.insert(b.end(), kModelMagic.begin(), kModelMagic.end());
  detail::put_u32(b, kModelVersion);
  detail::put_u32(b, 0);
  detail::put_u64(b, m.arch.dim);
  detail::put_u64(b, m.arch.n_blocks);
  detail::put_u64(b, m.arch.hidden);
  detail::put_f64(b, m.arch.clamp);
  detail::put_u64(b, m.params.size());
  for (double v : m.params.values()) detail::put_f64(b, v);
  detail::put_u32(b, detail::crc32_of(b.data(), b.size()));
  return b;
}

inline FlowModel deserialize(const std::vector<unsigned char>& b) {
  constexpr std::size_t header = 56;
  if (b.size() < header + 4) throw DataError("model file truncated");
  if (!std::equal(kModelMagic.begin(), kModelMagic.end(), b.begin())) throw DataError("not a flow model file");
  const auto version = static_cast<std::uint32_t>(detail::get_u(b, 8, 4));
  if (version != kModelVersion) throw DataError("unsupported model format version " + std::to_string(version));
  const std::uint64_t n = detail::get_u(b, 48, 8);
  if (n > (b.size() - header - 4) / 8 || b.size() != header + 8 * n + 4)
    throw DataError("model file length does not match parameter count");
  const auto stored = static_cast<std::uint32_t>(detail::get_u(b, header + 8 * n, 4));
  if (stored != detail::crc32_of(b.data(), header + 8 * n)) throw DataError("model file checksum mismatch");

  FlowArch arch;
  arch.dim = detail::get_u(b, 16, 8);
  arch.n_blocks = detail::get_u(b, 24, 8);
  arch.hidden = detail::get_u(b, 32, 8);
  arch.clamp = std::bit_cast<double>(detail::get_u(b, 40, 8));
  auto layout = make_layout(arch);
  if (layout->total() != n) throw DataError("parameter count does not match architecture");
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = std::bit_cast<double>(detail::get_u(b, header + 8 * i, 8));
  FlowModel m{arch, ParamVector(layout, std::move(values))};
  if (!m.params.all_finite()) throw DataError("model file contains non-finite weights");
  return m;
}

inline void save_model(const FlowModel& m, const std::filesystem::path& path) {
  auto bytes = serialize(m);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

inline FlowModel load_model(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace metarefine::flow
