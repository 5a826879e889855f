#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>

#include "prunekit/errors.hpp"
#include "prunekit/matrix.hpp"

namespace prunekit {

namespace fs = std::filesystem;

// Writes to a sibling temp file and renames it into place, so readers never
// observe a truncated file.
inline void write_file_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// PKMX matrix file: "PKMX", u32 rows, u32 cols, u8 dtype, then row-major
// little-endian values. dtype 0 = float64, 1 = float32.
namespace pkmx {

inline constexpr std::array<char, 4> kMagic{'P', 'K', 'M', 'X'};
inline constexpr std::uint8_t kFloat64 = 0;
inline constexpr std::uint8_t kFloat32 = 1;
inline constexpr std::size_t kHeaderSize = 13;

namespace detail {

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(std::string_view in, std::size_t pos) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

template <typename T>
using bits_t = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;

}  // namespace detail

template <typename T>
constexpr std::uint8_t dtype_tag() {
  static_assert(std::is_same_v<T, double> || std::is_same_v<T, float>);
  return std::is_same_v<T, double> ? kFloat64 : kFloat32;
}

template <typename T>
std::string encode(const BasicMatrix<T>& m) {
  PRUNEKIT_REQUIRE(m.rows() <= UINT32_MAX && m.cols() <= UINT32_MAX, "pkmx: dimensions exceed u32");
  std::string out;
  out.reserve(kHeaderSize + m.size() * sizeof(T));
  out.append(kMagic.begin(), kMagic.end());
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
  out.push_back(static_cast<char>(dtype_tag<T>()));
  for (T x : m.values()) detail::put_le(out, std::bit_cast<detail::bits_t<T>>(x));
  return out;
}

template <typename T>
BasicMatrix<T> decode(std::string_view bytes) {
  if (bytes.size() < kHeaderSize || std::memcmp(bytes.data(), kMagic.data(), 4) != 0)
    throw std::runtime_error("pkmx: bad magic");
  const auto rows = detail::get_le<std::uint32_t>(bytes, 4);
  const auto cols = detail::get_le<std::uint32_t>(bytes, 8);
  const auto tag = static_cast<std::uint8_t>(bytes[12]);
  const std::size_t n = std::size_t(rows) * cols;
  const std::size_t width = tag == kFloat64 ? 8 : tag == kFloat32 ? 4 : 0;
  if (width == 0) throw std::runtime_error("pkmx: unknown dtype tag");
  if (bytes.size() != kHeaderSize + n * width) throw std::runtime_error("pkmx: truncated payload");
  std::vector<T> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t pos = kHeaderSize + i * width;
    if (tag == kFloat64)
      data[i] = static_cast<T>(std::bit_cast<double>(detail::get_le<std::uint64_t>(bytes, pos)));
    else
      data[i] = static_cast<T>(std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes, pos)));
  }
  return BasicMatrix<T>(rows, cols, std::move(data));
}

template <typename T>
void save(const fs::path& path, const BasicMatrix<T>& m) {
  write_file_atomic(path, encode(m));
}

template <typename T = double>
BasicMatrix<T> load(const fs::path& path) {
  return decode<T>(read_file(path));
}

}  // namespace pkmx

// 64-bit FNV-1a, used for config fingerprints and cache keys.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xF];
  return s;
}

}  // namespace prunekit
