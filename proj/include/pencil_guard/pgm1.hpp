#pragma once

// "PGM1" binary matrix container shared by every stage:
//   magic "PGM1" | u32 rows | u32 cols | u8 flag | payload
// flag 0 = real f64, flag 1 = complex interleaved (re, im) f64.
// All integers and doubles little-endian, payload row-major.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <variant>

#include "pencil_guard/matrix.hpp"

namespace pencil_guard::pgm1 {

inline constexpr std::array<char, 4> kMagic{'P', 'G', 'M', '1'};
inline constexpr std::uint8_t kRealFlag = 0;
inline constexpr std::uint8_t kComplexFlag = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  std::array<std::uint8_t, sizeof(U)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.insert(out.end(), bytes.begin(), bytes.end());
}

template <typename U>
U get_le(std::span<const std::uint8_t> in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) fail(ErrorCode::CorruptHeader, "PGM1 stream truncated");
  std::array<std::uint8_t, sizeof(U)> bytes;
  std::memcpy(bytes.data(), in.data() + pos, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  pos += sizeof(U);
  U value;
  std::memcpy(&value, bytes.data(), sizeof(U));
  return value;
}

inline void put_header(std::vector<std::uint8_t>& out, std::size_t rows, std::size_t cols,
                       std::uint8_t flag) {
  out.insert(out.end(), kMagic.begin(), kMagic.end());
  put_le(out, static_cast<std::uint32_t>(rows));
  put_le(out, static_cast<std::uint32_t>(cols));
  out.push_back(flag);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode(const RealMatrix& m) {
  std::vector<std::uint8_t> out;
  out.reserve(13 + 8 * m.size());
  detail::put_header(out, m.rows(), m.cols(), kRealFlag);
  for (double v : m.data()) detail::put_le(out, v);
  return out;
}

inline std::vector<std::uint8_t> encode(const ComplexMatrix& m) {
  std::vector<std::uint8_t> out;
  out.reserve(13 + 16 * m.size());
  detail::put_header(out, m.rows(), m.cols(), kComplexFlag);
  for (cdouble v : m.data()) {
    detail::put_le(out, v.real());
    detail::put_le(out, v.imag());
  }
  return out;
}

using AnyMatrix = std::variant<RealMatrix, ComplexMatrix>;

inline AnyMatrix decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 13 || std::memcmp(bytes.data(), kMagic.data(), 4) != 0) {
    fail(ErrorCode::CorruptHeader, "missing PGM1 magic");
  }
  std::size_t pos = 4;
  const auto rows = detail::get_le<std::uint32_t>(bytes, pos);
  const auto cols = detail::get_le<std::uint32_t>(bytes, pos);
  const std::uint8_t flag = bytes[pos++];
  const std::size_t count = static_cast<std::size_t>(rows) * cols;
  const std::size_t width = flag == kComplexFlag ? 16 : 8;
  if (flag != kRealFlag && flag != kComplexFlag) {
    fail(ErrorCode::CorruptHeader, "unknown PGM1 payload flag " + std::to_string(flag));
  }
  if (bytes.size() - pos != count * width) {
    fail(ErrorCode::CorruptHeader, "PGM1 payload length " + std::to_string(bytes.size() - pos) +
                                       " does not match " + std::to_string(rows) + "x" +
                                       std::to_string(cols));
  }
  if (flag == kRealFlag) {
    RealMatrix m(rows, cols);
    for (auto& v : m.data()) v = detail::get_le<double>(bytes, pos);
    return m;
  }
  ComplexMatrix m(rows, cols);
  for (auto& v : m.data()) {
    const double re = detail::get_le<double>(bytes, pos);
    const double im = detail::get_le<double>(bytes, pos);
    v = {re, im};
  }
  return m;
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

template <typename T>
void save(const std::filesystem::path& path, const Matrix<T>& m) {
  write_bytes(path, encode(m));
}

/// Loads a real matrix; a complex payload with nonzero imaginary parts is rejected.
inline RealMatrix load_real(const std::filesystem::path& path) {
  auto any = decode(read_bytes(path));
  if (auto* r = std::get_if<RealMatrix>(&any)) return std::move(*r);
  const auto& c = std::get<ComplexMatrix>(any);
  RealMatrix out(c.rows(), c.cols());
  for (std::size_t k = 0; k < c.size(); ++k) {
    if (c.data()[k].imag() != 0.0) fail(ErrorCode::UnsupportedEncoding, path.string() + " is complex");
    out.data()[k] = c.data()[k].real();
  }
  return out;
}

inline ComplexMatrix load_complex(const std::filesystem::path& path) {
  auto any = decode(read_bytes(path));
  if (auto* c = std::get_if<ComplexMatrix>(&any)) return std::move(*c);
  return to_complex(std::get<RealMatrix>(any));
}

}  // namespace pencil_guard::pgm1
