#pragma once

// BSTN binary tensor format, little-endian throughout:
//   "BSTN" | u32 version (1) | u32 dtype (0 = f32) | u32 ndim (4) |
//   ndim x u64 dims | product(dims) x f32 payload
// No alignment padding.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "slugplan/error.hpp"
#include "slugplan/tensor.hpp"

namespace slugplan {

inline constexpr std::array<char, 4> kBstnMagic = {'B', 'S', 'T', 'N'};
inline constexpr std::uint32_t kBstnVersion = 1;
inline constexpr std::uint32_t kBstnDtypeF32 = 0;

namespace detail {

template <typename U>
void put_le(std::vector<char>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
  }
}

template <typename U>
U get_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<U>(v);
}

inline void read_exact(std::istream& in, unsigned char* dst, std::size_t n, const char* what) {
  in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw FormatError(std::string("BSTN: truncated ") + what + ": expected " +
                      std::to_string(n) + " bytes, got " + std::to_string(in.gcount()));
  }
}

}  // namespace detail

inline std::vector<char> encode_tensor(const Tensor& t) {
  std::vector<char> out;
  const auto& s = t.shape();
  out.reserve(16 + 32 + t.size() * 4);
  out.insert(out.end(), kBstnMagic.begin(), kBstnMagic.end());
  detail::put_le<std::uint32_t>(out, kBstnVersion);
  detail::put_le<std::uint32_t>(out, kBstnDtypeF32);
  detail::put_le<std::uint32_t>(out, 4);
  for (std::uint64_t d : {s.n, s.c, s.h, s.w}) detail::put_le<std::uint64_t>(out, d);
  for (float v : t.data()) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

// Returns the number of bytes written.
inline std::size_t write_tensor(const Tensor& t, std::ostream& sink) {
  const auto bytes = encode_tensor(t);
  sink.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!sink) throw IoError("BSTN: write failed after " + std::to_string(bytes.size()) + " bytes");
  return bytes.size();
}

inline Tensor read_tensor(std::istream& source) {
  std::array<unsigned char, 16> header{};
  detail::read_exact(source, header.data(), header.size(), "header");
  if (std::memcmp(header.data(), kBstnMagic.data(), 4) != 0) {
    throw FormatError("BSTN: bad magic '" +
                      std::string(reinterpret_cast<const char*>(header.data()), 4) + "'");
  }
  const auto version = detail::get_le<std::uint32_t>(header.data() + 4);
  if (version != kBstnVersion) {
    throw FormatError("BSTN: unsupported version " + std::to_string(version));
  }
  const auto dtype = detail::get_le<std::uint32_t>(header.data() + 8);
  if (dtype != kBstnDtypeF32) {
    throw FormatError("BSTN: unsupported dtype code " + std::to_string(dtype) +
                      " (only 0 = f32)");
  }
  const auto ndim = detail::get_le<std::uint32_t>(header.data() + 12);
  if (ndim != 4) throw FormatError("BSTN: expected ndim 4, got " + std::to_string(ndim));

  std::array<unsigned char, 32> dims_raw{};
  detail::read_exact(source, dims_raw.data(), dims_raw.size(), "dims");
  std::array<std::uint64_t, 4> dims{};
  for (std::size_t i = 0; i < 4; ++i) {
    dims[i] = detail::get_le<std::uint64_t>(dims_raw.data() + 8 * i);
    if (dims[i] == 0) throw FormatError("BSTN: zero dimension at axis " + std::to_string(i));
  }
  const Shape4 shape{dims[0], dims[1], dims[2], dims[3]};
  const std::size_t expected = shape.elements() * 4;

  std::vector<unsigned char> payload(expected);
  source.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(expected));
  const auto got = static_cast<std::size_t>(source.gcount());
  if (got != expected) {
    throw FormatError("BSTN: truncated payload: expected " + std::to_string(expected) +
                      " bytes, got " + std::to_string(got));
  }
  std::vector<float> values(shape.elements());
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(payload.data() + 4 * i));
  }
  return Tensor(shape, std::move(values));
}

inline Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open tensor file '" + path.string() + "'");
  return read_tensor(in);
}

inline std::size_t save_tensor(const Tensor& t, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return write_tensor(t, out);
}

}  // namespace slugplan
