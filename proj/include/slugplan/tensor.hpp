#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "slugplan/error.hpp"

namespace slugplan {

// (batch, channels, rows, cols); row-major with n outermost, w innermost.
struct Shape4 {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  constexpr std::size_t elements() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  constexpr bool valid() const { return n >= 1 && c >= 1 && h >= 1 && w >= 1; }

  friend constexpr bool operator==(const Shape4&, const Shape4&) = default;
};

inline std::string to_string(const Shape4& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," +
         std::to_string(s.h) + "," + std::to_string(s.w) + ")";
}

inline std::ostream& operator<<(std::ostream& os, const Shape4& s) {
  return os << to_string(s);
}

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape4 shape, float fill = 0.0f) : shape_(shape) {
    if (!shape.valid()) {
      throw ShapeError("invalid tensor shape " + to_string(shape) +
                       ": all dims must be >= 1");
    }
    data_.assign(shape.elements(), fill);
  }

  Tensor(Shape4 shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
    if (!shape.valid()) {
      throw ShapeError("invalid tensor shape " + to_string(shape) +
                       ": all dims must be >= 1");
    }
    if (data_.size() != shape.elements()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape));
    }
  }

  const Shape4& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }

  float& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[offset(n, c, h, w)];
  }
  float at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[offset(n, c, h, w)];
  }

  // One (batch, channel) plane as a contiguous h*w span.
  std::span<float> plane(std::size_t n, std::size_t c) {
    return std::span<float>(data_).subspan(offset(n, c, 0, 0), shape_.plane());
  }
  std::span<const float> plane(std::size_t n, std::size_t c) const {
    return std::span<const float>(data_).subspan(offset(n, c, 0, 0), shape_.plane());
  }

  // Bit-level equality; distinguishes -0.0 from 0.0 and compares NaN payloads.
  bool bit_equal(const Tensor& other) const {
    if (shape_ != other.shape_) return false;
    return std::equal(data_.begin(), data_.end(), other.data_.begin(),
                      [](float a, float b) {
                        return std::bit_cast<std::uint32_t>(a) ==
                               std::bit_cast<std::uint32_t>(b);
                      });
  }

 private:
  Shape4 shape_{};
  std::vector<float> data_;
};

// SplitMix64 (Steele, Lea, Flood); the only entropy source in the project.
class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed) : state_(seed) {}

  constexpr std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Upper 24 bits scaled into [-1, 1). Exact in binary32.
  constexpr float next_unit() {
    return static_cast<float>(next() >> 40) / 8388608.0f - 1.0f;
  }

 private:
  std::uint64_t state_;
};

inline Tensor prng_fill(std::uint64_t seed, Shape4 shape) {
  if (!shape.valid()) {
    throw ShapeError("prng_fill: invalid shape " + to_string(shape));
  }
  SplitMix64 rng(seed);
  std::vector<float> values(shape.elements());
  for (auto& v : values) v = rng.next_unit();
  return Tensor(shape, std::move(values));
}

inline std::vector<float> prng_vector(std::uint64_t seed, std::size_t length) {
  SplitMix64 rng(seed);
  std::vector<float> values(length);
  for (auto& v : values) v = rng.next_unit();
  return values;
}

// Half-open [lo, hi). May extend past the tensor it indexes; consumers apply
// padding semantics to the out-of-range part.
struct Interval {
  std::int64_t lo = 0;
  std::int64_t hi = 0;

  constexpr std::int64_t extent() const { return hi - lo; }
  constexpr bool empty() const { return hi <= lo; }

  // Number of coordinates that also fall inside [0, bound).
  constexpr std::int64_t clipped_extent(std::int64_t bound) const {
    return std::max<std::int64_t>(0, std::min(hi, bound) - std::max<std::int64_t>(lo, 0));
  }

  friend constexpr bool operator==(const Interval&, const Interval&) = default;
};

// Spatial rectangle over (rows, cols).
struct Region {
  Interval rows;
  Interval cols;

  constexpr std::int64_t elements() const { return rows.extent() * cols.extent(); }
  constexpr bool empty() const { return rows.empty() || cols.empty(); }

  constexpr std::int64_t clipped_elements(std::int64_t height, std::int64_t width) const {
    return rows.clipped_extent(height) * cols.clipped_extent(width);
  }

  friend constexpr bool operator==(const Region&, const Region&) = default;
};

inline std::string to_string(const Region& r) {
  return "(" + std::to_string(r.rows.lo) + ".." + std::to_string(r.rows.hi) + ", " +
         std::to_string(r.cols.lo) + ".." + std::to_string(r.cols.hi) + ")";
}

enum class PadPolicy { kZero, kNegInf };

inline constexpr float pad_value(PadPolicy policy) {
  return policy == PadPolicy::kZero ? 0.0f : -std::numeric_limits<float>::infinity();
}

// Dense (rows x cols) window of one channel plane, addressed in the plane's
// coordinate system through `region`.
struct Patch {
  Region region;
  std::vector<float> data;

  std::int64_t rows() const { return region.rows.extent(); }
  std::int64_t cols() const { return region.cols.extent(); }
  float at(std::int64_t r, std::int64_t c) const {
    return data[static_cast<std::size_t>((r - region.rows.lo) * cols() + (c - region.cols.lo))];
  }
};

// Copies the window `r` of plane (batch, channel) into `out` (row-major,
// r.elements() floats). Cells outside the plane get the policy value.
inline void extract_region_into(const Tensor& t, std::size_t batch, std::size_t channel,
                                const Region& r, PadPolicy pad, std::span<float> out) {
  const auto& s = t.shape();
  if (batch >= s.n || channel >= s.c) {
    throw IndexError("extract_region: (batch " + std::to_string(batch) + ", channel " +
                     std::to_string(channel) + ") out of range for shape " + to_string(s));
  }
  if (r.empty()) throw IndexError("extract_region: empty region " + to_string(r));
  const auto height = static_cast<std::int64_t>(s.h);
  const auto width = static_cast<std::int64_t>(s.w);
  const float fill = pad_value(pad);
  const auto plane = t.plane(batch, channel);
  const std::int64_t cols = r.cols.extent();
  const std::int64_t c0 = std::max<std::int64_t>(r.cols.lo, 0);
  const std::int64_t c1 = std::min(r.cols.hi, width);
  std::size_t k = 0;
  for (std::int64_t y = r.rows.lo; y < r.rows.hi; ++y, k += static_cast<std::size_t>(cols)) {
    float* dst = out.data() + k;
    if (y < 0 || y >= height || c0 >= c1) {
      std::fill(dst, dst + cols, fill);
      continue;
    }
    std::fill(dst, dst + (c0 - r.cols.lo), fill);
    const float* src = plane.data() + y * width;
    std::copy(src + c0, src + c1, dst + (c0 - r.cols.lo));
    std::fill(dst + (c1 - r.cols.lo), dst + cols, fill);
  }
}

inline Patch extract_region(const Tensor& t, std::size_t batch, std::size_t channel,
                            const Region& r, PadPolicy pad) {
  if (r.empty()) throw IndexError("extract_region: empty region " + to_string(r));
  Patch p{r, std::vector<float>(static_cast<std::size_t>(r.elements()))};
  extract_region_into(t, batch, channel, r, pad, p.data);
  return p;
}

}  // namespace slugplan
