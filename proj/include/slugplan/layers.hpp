#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "slugplan/error.hpp"
#include "slugplan/tensor.hpp"

namespace slugplan {

enum class LayerKind { kRelu, kBatchNorm, kMaxPool, kAvgPool, kConv2d, kLinear };

inline constexpr LayerKind kAllLayerKinds[] = {LayerKind::kRelu,    LayerKind::kBatchNorm,
                                              LayerKind::kMaxPool, LayerKind::kAvgPool,
                                              LayerKind::kConv2d,  LayerKind::kLinear};

enum class OpClass { kElementwise, kPooling, kOpaque };

constexpr OpClass classify(LayerKind kind) {
  switch (kind) {
    case LayerKind::kRelu:
    case LayerKind::kBatchNorm:
      return OpClass::kElementwise;
    case LayerKind::kMaxPool:
    case LayerKind::kAvgPool:
      return OpClass::kPooling;
    case LayerKind::kConv2d:
    case LayerKind::kLinear:
      return OpClass::kOpaque;
  }
  return OpClass::kOpaque;
}

constexpr bool is_optimizable(OpClass c) { return c != OpClass::kOpaque; }
constexpr bool is_optimizable(LayerKind k) { return is_optimizable(classify(k)); }

constexpr std::string_view kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kRelu: return "relu";
    case LayerKind::kBatchNorm: return "batchnorm";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kAvgPool: return "avgpool";
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kLinear: return "linear";
  }
  return "?";
}

inline std::optional<LayerKind> kind_from_name(std::string_view name) {
  for (auto k : kAllLayerKinds) {
    if (kind_name(k) == name) return k;
  }
  return std::nullopt;
}

constexpr std::string_view class_name(OpClass c) {
  switch (c) {
    case OpClass::kElementwise: return "elementwise";
    case OpClass::kPooling: return "pooling";
    case OpClass::kOpaque: return "opaque";
  }
  return "?";
}

struct Axis2 {
  std::int64_t h = 1;
  std::int64_t w = 1;
  friend constexpr bool operator==(const Axis2&, const Axis2&) = default;
};

// Sliding-window geometry shared by pooling and convolution.
struct Window {
  Axis2 kernel{1, 1};
  Axis2 stride{1, 1};
  Axis2 padding{0, 0};

  static constexpr Window identity() { return {}; }
  constexpr bool is_identity() const {
    return kernel == Axis2{1, 1} && stride == Axis2{1, 1} && padding == Axis2{0, 0};
  }
  friend constexpr bool operator==(const Window&, const Window&) = default;
};

inline std::string to_string(const Window& g) {
  return "k=" + std::to_string(g.kernel.h) + "x" + std::to_string(g.kernel.w) +
         ",s=" + std::to_string(g.stride.h) + "x" + std::to_string(g.stride.w) +
         ",p=" + std::to_string(g.padding.h) + "x" + std::to_string(g.padding.w);
}

// floor((in + 2p - k) / s) + 1; non-positive when the window does not fit.
constexpr std::int64_t window_output_extent(std::int64_t in, std::int64_t kernel,
                                            std::int64_t stride, std::int64_t padding) {
  const std::int64_t span = in + 2 * padding - kernel;
  if (span < 0) return 0;
  return span / stride + 1;
}

// Where a parameter tensor came from; kept so a graph serializes back to the
// directives it was parsed from.
struct WeightSource {
  enum class Kind { kInline, kFile, kPrng };
  Kind kind = Kind::kInline;
  std::string file;
  std::uint64_t seed = 0;
  friend bool operator==(const WeightSource&, const WeightSource&) = default;
};

struct ParamTensor {
  std::vector<float> values;
  WeightSource source;
  // Set when loaded from BSTN; conv weights are checked against it.
  std::optional<Shape4> file_shape;
  friend bool operator==(const ParamTensor&, const ParamTensor&) = default;
};

struct BatchNormParams {
  ParamTensor gamma;
  ParamTensor beta;
  ParamTensor running_mean;
  ParamTensor running_var;
  float eps = 1e-5f;
  friend bool operator==(const BatchNormParams&, const BatchNormParams&) = default;
};

struct PoolParams {
  Window window;
  friend bool operator==(const PoolParams&, const PoolParams&) = default;
};

struct Conv2dParams {
  std::size_t out_channels = 1;
  Window window;
  ParamTensor weights;  // (out_channels, c_in, kh, kw)
  ParamTensor bias;     // (out_channels)
  friend bool operator==(const Conv2dParams&, const Conv2dParams&) = default;
};

struct LinearParams {
  std::size_t out_features = 1;
  ParamTensor weight;  // (out_features, in_features)
  ParamTensor bias;    // (out_features)
  friend bool operator==(const LinearParams&, const LinearParams&) = default;
};

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::variant<std::monostate, BatchNormParams, PoolParams, Conv2dParams, LinearParams> params;

  static LayerSpec relu() { return {LayerKind::kRelu, std::monostate{}}; }
  static LayerSpec batchnorm(BatchNormParams p) { return {LayerKind::kBatchNorm, std::move(p)}; }
  static LayerSpec maxpool(Window w) { return {LayerKind::kMaxPool, PoolParams{w}}; }
  static LayerSpec avgpool(Window w) { return {LayerKind::kAvgPool, PoolParams{w}}; }
  static LayerSpec conv2d(Conv2dParams p) { return {LayerKind::kConv2d, std::move(p)}; }
  static LayerSpec linear(LinearParams p) { return {LayerKind::kLinear, std::move(p)}; }

  OpClass op_class() const { return classify(kind); }

  const BatchNormParams& bn() const { return std::get<BatchNormParams>(params); }
  const PoolParams& pool() const { return std::get<PoolParams>(params); }
  const Conv2dParams& conv() const { return std::get<Conv2dParams>(params); }
  const LinearParams& lin() const { return std::get<LinearParams>(params); }
  BatchNormParams& bn() { return std::get<BatchNormParams>(params); }
  PoolParams& pool() { return std::get<PoolParams>(params); }
  Conv2dParams& conv() { return std::get<Conv2dParams>(params); }
  LinearParams& lin() { return std::get<LinearParams>(params); }

  // Spatial geometry seen by the planner; identity for elementwise kinds.
  Window geometry() const {
    if (classify(kind) == OpClass::kPooling) return pool().window;
    return Window::identity();
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// ---------------------------------------------------------------------------
// Elementwise kernels. Identical code serves the whole-tensor and patch forms.

inline void relu_inplace(std::span<float> x) {
  for (float& v : x) v = v > 0.0f ? v : 0.0f;
}

inline Tensor relu(const Tensor& x) {
  Tensor y = x;
  relu_inplace(y.data());
  return y;
}

// Per-channel constants: y = ((x - mean) / denom) * gamma + beta with
// denom = sqrt(var + eps) computed once in binary32.
struct BatchNormChannel {
  float mean;
  float denom;
  float gamma;
  float beta;
};

inline BatchNormChannel batchnorm_channel(const BatchNormParams& p, std::size_t c) {
  return {p.running_mean.values[c], std::sqrt(p.running_var.values[c] + p.eps),
          p.gamma.values[c], p.beta.values[c]};
}

inline void batchnorm_inplace(std::span<float> x, const BatchNormChannel& k) {
  for (float& v : x) {
    const float centered = v - k.mean;
    const float normalized = centered / k.denom;
    const float scaled = normalized * k.gamma;
    v = scaled + k.beta;
  }
}

inline void check_batchnorm_lengths(const BatchNormParams& p, std::size_t channels) {
  for (const auto* v : {&p.gamma, &p.beta, &p.running_mean, &p.running_var}) {
    if (v->values.size() != channels) {
      throw ShapeError("batchnorm: parameter length " + std::to_string(v->values.size()) +
                       " does not match channel count " + std::to_string(channels));
    }
  }
}

inline Tensor batchnorm_inference(const Tensor& x, const BatchNormParams& p) {
  const auto& s = x.shape();
  check_batchnorm_lengths(p, s.c);
  Tensor y = x;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) batchnorm_inplace(y.plane(n, c), batchnorm_channel(p, c));
  }
  return y;
}

// ---------------------------------------------------------------------------
// Pooling. The core works on any window of a plane: `src` holds the cells of
// `src_region`, and coordinates outside [0, src_h) x [0, src_w) are padding no
// matter what value the buffer holds there. Only destination cells inside
// [0, dst_h) x [0, dst_w) are written.

struct PlaneView {
  const float* data;
  Region region;
  std::int64_t height;  // extent of the full plane
  std::int64_t width;
};

struct PlaneTarget {
  float* data;
  Region region;
  std::int64_t height;
  std::int64_t width;
};

inline void pool_window_region(LayerKind kind, const Window& g, const PlaneView& src,
                               const PlaneTarget& dst) {
  const std::int64_t src_cols = src.region.cols.extent();
  const std::int64_t dst_cols = dst.region.cols.extent();
  const std::int64_t y0 = std::max<std::int64_t>(dst.region.rows.lo, 0);
  const std::int64_t y1 = std::min(dst.region.rows.hi, dst.height);
  const std::int64_t x0 = std::max<std::int64_t>(dst.region.cols.lo, 0);
  const std::int64_t x1 = std::min(dst.region.cols.hi, dst.width);
  const float divisor = static_cast<float>(g.kernel.h * g.kernel.w);
  for (std::int64_t oy = y0; oy < y1; ++oy) {
    const std::int64_t wy0 = std::max<std::int64_t>(oy * g.stride.h - g.padding.h, 0);
    const std::int64_t wy1 = std::min(oy * g.stride.h - g.padding.h + g.kernel.h, src.height);
    float* out_row = dst.data + (oy - dst.region.rows.lo) * dst_cols;
    for (std::int64_t ox = x0; ox < x1; ++ox) {
      const std::int64_t wx0 = std::max<std::int64_t>(ox * g.stride.w - g.padding.w, 0);
      const std::int64_t wx1 = std::min(ox * g.stride.w - g.padding.w + g.kernel.w, src.width);
      if (kind == LayerKind::kMaxPool) {
        float m = -std::numeric_limits<float>::infinity();
        for (std::int64_t y = wy0; y < wy1; ++y) {
          const float* row = src.data + (y - src.region.rows.lo) * src_cols - (src.region.cols.lo - wx0);
          for (std::int64_t x = 0; x < wx1 - wx0; ++x) {
            if (row[x] > m) m = row[x];
          }
        }
        out_row[ox - dst.region.cols.lo] = m;
      } else {
        // Padded cells contribute 0.0; skipping them is bit-identical since
        // a sum seeded with +0.0 never becomes -0.0.
        float s = 0.0f;
        for (std::int64_t y = wy0; y < wy1; ++y) {
          const float* row = src.data + (y - src.region.rows.lo) * src_cols - (src.region.cols.lo - wx0);
          for (std::int64_t x = 0; x < wx1 - wx0; ++x) s += row[x];
        }
        out_row[ox - dst.region.cols.lo] = s / divisor;
      }
    }
  }
}

inline Shape4 pool_output_shape(const Shape4& in, const Window& g) {
  const auto oh = window_output_extent(static_cast<std::int64_t>(in.h), g.kernel.h, g.stride.h,
                                       g.padding.h);
  const auto ow = window_output_extent(static_cast<std::int64_t>(in.w), g.kernel.w, g.stride.w,
                                       g.padding.w);
  if (oh < 1 || ow < 1) {
    throw ShapeError("window " + to_string(g) + " does not fit input " + to_string(in));
  }
  return {in.n, in.c, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)};
}

inline Tensor pool2d(LayerKind kind, const Tensor& x, const Window& g) {
  const Shape4 in = x.shape();
  const Shape4 out_shape = pool_output_shape(in, g);
  Tensor y(out_shape);
  const auto ih = static_cast<std::int64_t>(in.h), iw = static_cast<std::int64_t>(in.w);
  const auto oh = static_cast<std::int64_t>(out_shape.h),
             ow = static_cast<std::int64_t>(out_shape.w);
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t c = 0; c < in.c; ++c) {
      pool_window_region(kind, g, {x.plane(n, c).data(), {{0, ih}, {0, iw}}, ih, iw},
                         {y.plane(n, c).data(), {{0, oh}, {0, ow}}, oh, ow});
    }
  }
  return y;
}

inline Tensor maxpool2d(const Tensor& x, const Window& g) { return pool2d(LayerKind::kMaxPool, x, g); }
inline Tensor avgpool2d(const Tensor& x, const Window& g) { return pool2d(LayerKind::kAvgPool, x, g); }

// Patch form: `in` is a window of a plane of extent (in_h, in_w); returns the
// pooled window `out_region` of the output plane (extent out_h x out_w).
// Output cells outside the output plane are left at 0.
inline Patch pool_patch(LayerKind kind, const Window& g, const Patch& in, std::int64_t in_h,
                        std::int64_t in_w, const Region& out_region, std::int64_t out_h,
                        std::int64_t out_w) {
  Patch out{out_region, std::vector<float>(static_cast<std::size_t>(out_region.elements()), 0.0f)};
  pool_window_region(kind, g, {in.data.data(), in.region, in_h, in_w},
                     {out.data.data(), out_region, out_h, out_w});
  return out;
}

// ---------------------------------------------------------------------------
// Opaque layers: whole-tensor only.

inline Tensor conv2d(const Tensor& x, const Conv2dParams& p) {
  const Shape4 in = x.shape();
  const Window& g = p.window;
  const std::size_t k_out = p.out_channels;
  const auto kh = static_cast<std::size_t>(g.kernel.h), kw = static_cast<std::size_t>(g.kernel.w);
  if (p.weights.values.size() != k_out * in.c * kh * kw) {
    throw ShapeError("conv2d: weights hold " + std::to_string(p.weights.values.size()) +
                     " values, expected " + std::to_string(k_out * in.c * kh * kw) + " for " +
                     std::to_string(in.c) + " input channels");
  }
  if (p.bias.values.size() != k_out) {
    throw ShapeError("conv2d: bias length " + std::to_string(p.bias.values.size()) +
                     " != out_channels " + std::to_string(k_out));
  }
  Shape4 out = pool_output_shape(in, g);
  out.c = k_out;
  Tensor y(out);
  const auto ih = static_cast<std::int64_t>(in.h), iw = static_cast<std::int64_t>(in.w);
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t k = 0; k < k_out; ++k) {
      for (std::size_t i = 0; i < out.h; ++i) {
        for (std::size_t j = 0; j < out.w; ++j) {
          float acc = p.bias.values[k];
          for (std::size_t c = 0; c < in.c; ++c) {
            const float* wk = p.weights.values.data() + ((k * in.c + c) * kh) * kw;
            for (std::size_t u = 0; u < kh; ++u) {
              const std::int64_t y_in = static_cast<std::int64_t>(i) * g.stride.h +
                                        static_cast<std::int64_t>(u) - g.padding.h;
              if (y_in < 0 || y_in >= ih) continue;
              for (std::size_t v = 0; v < kw; ++v) {
                const std::int64_t x_in = static_cast<std::int64_t>(j) * g.stride.w +
                                          static_cast<std::int64_t>(v) - g.padding.w;
                if (x_in < 0 || x_in >= iw) continue;
                acc += wk[u * kw + v] * x.at(n, c, static_cast<std::size_t>(y_in),
                                             static_cast<std::size_t>(x_in));
              }
            }
          }
          y.at(n, k, i, j) = acc;
        }
      }
    }
  }
  return y;
}

// Flattens each batch item to c*h*w features; output shape (n, out, 1, 1).
inline Tensor linear(const Tensor& x, const LinearParams& p) {
  const Shape4 in = x.shape();
  const std::size_t features = in.c * in.h * in.w;
  if (p.weight.values.size() != p.out_features * features) {
    throw ShapeError("linear: weight holds " + std::to_string(p.weight.values.size()) +
                     " values, expected " + std::to_string(p.out_features * features) +
                     " for " + std::to_string(features) + " input features");
  }
  if (p.bias.values.size() != p.out_features) {
    throw ShapeError("linear: bias length " + std::to_string(p.bias.values.size()) +
                     " != out_features " + std::to_string(p.out_features));
  }
  Tensor y(Shape4{in.n, p.out_features, 1, 1});
  for (std::size_t n = 0; n < in.n; ++n) {
    const float* row = x.data().data() + n * features;
    for (std::size_t o = 0; o < p.out_features; ++o) {
      const float* w = p.weight.values.data() + o * features;
      float acc = p.bias.values[o];
      for (std::size_t i = 0; i < features; ++i) acc += w[i] * row[i];
      y.at(n, o, 0, 0) = acc;
    }
  }
  return y;
}

// Output shape of one layer; throws ShapeError when parameters do not fit.
inline Shape4 layer_output_shape(const LayerSpec& layer, const Shape4& in) {
  switch (layer.kind) {
    case LayerKind::kRelu:
    case LayerKind::kBatchNorm:
      return in;
    case LayerKind::kMaxPool:
    case LayerKind::kAvgPool:
      return pool_output_shape(in, layer.pool().window);
    case LayerKind::kConv2d: {
      Shape4 out = pool_output_shape(in, layer.conv().window);
      out.c = layer.conv().out_channels;
      return out;
    }
    case LayerKind::kLinear:
      return {in.n, layer.lin().out_features, 1, 1};
  }
  return in;
}

inline Tensor apply_layer(const LayerSpec& layer, const Tensor& x) {
  switch (layer.kind) {
    case LayerKind::kRelu: return relu(x);
    case LayerKind::kBatchNorm: return batchnorm_inference(x, layer.bn());
    case LayerKind::kMaxPool: return maxpool2d(x, layer.pool().window);
    case LayerKind::kAvgPool: return avgpool2d(x, layer.pool().window);
    case LayerKind::kConv2d: return conv2d(x, layer.conv());
    case LayerKind::kLinear: return linear(x, layer.lin());
  }
  return x;
}

// Parameter elements a layer reads from main memory when applied to a tensor
// with `channels` input channels (per full pass).
inline std::size_t layer_param_elements(const LayerSpec& layer) {
  switch (layer.kind) {
    case LayerKind::kBatchNorm: return 4 * layer.bn().gamma.values.size();
    case LayerKind::kConv2d: return layer.conv().weights.values.size() + layer.conv().bias.values.size();
    case LayerKind::kLinear: return layer.lin().weight.values.size() + layer.lin().bias.values.size();
    default: return 0;
  }
}

// Arithmetic tally per produced output element.
inline std::uint64_t layer_ops_per_output(const LayerSpec& layer, const Shape4& in) {
  switch (layer.kind) {
    case LayerKind::kRelu: return 1;
    case LayerKind::kBatchNorm: return 4;
    case LayerKind::kMaxPool: {
      const auto& k = layer.pool().window.kernel;
      return static_cast<std::uint64_t>(k.h * k.w);
    }
    case LayerKind::kAvgPool: {
      const auto& k = layer.pool().window.kernel;
      return static_cast<std::uint64_t>(k.h * k.w) + 1;
    }
    case LayerKind::kConv2d: {
      const auto& k = layer.conv().window.kernel;
      return static_cast<std::uint64_t>(in.c) * static_cast<std::uint64_t>(k.h * k.w);
    }
    case LayerKind::kLinear: return static_cast<std::uint64_t>(in.c * in.h * in.w);
  }
  return 0;
}

}  // namespace slugplan
