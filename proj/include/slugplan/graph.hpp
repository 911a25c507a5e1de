#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "slugplan/bstn.hpp"
#include "slugplan/error.hpp"
#include "slugplan/layers.hpp"
#include "slugplan/tensor.hpp"

namespace slugplan {

// A sequential network: node i feeds node i + 1.
struct NetworkGraph {
  Shape4 input_shape;
  std::vector<LayerSpec> layers;
  // Filled by validate(): output shape of each node.
  std::vector<Shape4> shapes;
  // Indices of LINEAR nodes, each preceded by an implicit flatten.
  std::vector<std::size_t> flatten_points;

  bool validated() const { return shapes.size() == layers.size(); }

  const Shape4& input_of(std::size_t node) const {
    return node == 0 ? input_shape : shapes.at(node - 1);
  }
  const Shape4& output_shape() const { return shapes.empty() ? input_shape : shapes.back(); }

  friend bool operator==(const NetworkGraph&, const NetworkGraph&) = default;
};

namespace detail {

using nlohmann::json;

inline std::string layer_ctx(std::size_t index) {
  return "layer " + std::to_string(index);
}

inline void reject_unknown(const json& obj, std::initializer_list<const char*> allowed,
                           const std::string& ctx) {
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ParseError(ctx + ": unknown field '" + key + "'");
  }
}

inline const json& require(const json& obj, const char* field, const std::string& ctx) {
  auto it = obj.find(field);
  if (it == obj.end()) throw ParseError(ctx + ": missing parameter '" + field + "'");
  return *it;
}

inline std::int64_t as_int(const json& v, const std::string& ctx, const char* field) {
  if (!v.is_number_integer()) {
    throw ParseError(ctx + ": field '" + std::string(field) + "' must be an integer");
  }
  return v.get<std::int64_t>();
}

inline Axis2 parse_axis2(const json& params, const char* field, const std::string& ctx) {
  const json& v = require(params, field, ctx);
  if (v.is_number_integer()) {
    const auto x = v.get<std::int64_t>();
    return {x, x};
  }
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer()) {
    throw ParseError(ctx + ": field '" + std::string(field) +
                     "' must be an integer or a pair of integers");
  }
  return {v[0].get<std::int64_t>(), v[1].get<std::int64_t>()};
}

inline Window parse_window(const json& params, const std::string& ctx) {
  return {parse_axis2(params, "kernel", ctx), parse_axis2(params, "stride", ctx),
          parse_axis2(params, "padding", ctx)};
}

inline ParamTensor parse_param(const json& params, const char* field, const std::string& ctx,
                               const std::filesystem::path& base_dir) {
  const json& v = require(params, field, ctx);
  const std::string fctx = ctx + " field '" + field + "'";
  if (!v.is_object() || v.size() != 1) {
    throw ParseError(fctx + ": expected {\"file\": ...}, {\"prng_seed\": ...} or {\"values\": [...]}");
  }
  ParamTensor p;
  if (auto it = v.find("file"); it != v.end()) {
    if (!it->is_string()) throw ParseError(fctx + ": 'file' must be a string");
    p.source = {WeightSource::Kind::kFile, it->get<std::string>(), 0};
    const std::filesystem::path path = base_dir / p.source.file;
    if (!std::filesystem::exists(path)) {
      throw IoError(fctx + ": weight file '" + path.string() + "' not found");
    }
    Tensor t = load_tensor(path);
    p.file_shape = t.shape();
    p.values.assign(t.data().begin(), t.data().end());
  } else if (auto it = v.find("prng_seed"); it != v.end()) {
    if (!it->is_number_unsigned() && !it->is_number_integer()) {
      throw ParseError(fctx + ": 'prng_seed' must be an integer");
    }
    p.source = {WeightSource::Kind::kPrng, {}, it->get<std::uint64_t>()};
  } else if (auto it = v.find("values"); it != v.end()) {
    if (!it->is_array()) throw ParseError(fctx + ": 'values' must be an array");
    p.source = {WeightSource::Kind::kInline, {}, 0};
    for (const auto& x : *it) {
      if (!x.is_number()) throw ParseError(fctx + ": 'values' must hold numbers");
      p.values.push_back(x.get<float>());
    }
  } else {
    throw ParseError(fctx + ": unknown weight directive '" + v.begin().key() + "'");
  }
  return p;
}

inline LayerSpec parse_layer(const json& j, std::size_t index,
                             const std::filesystem::path& base_dir) {
  const std::string ctx = layer_ctx(index);
  if (!j.is_object()) throw ParseError(ctx + ": expected an object");
  reject_unknown(j, {"kind", "params"}, ctx);
  const json& kind_json = require(j, "kind", ctx);
  if (!kind_json.is_string()) throw ParseError(ctx + ": 'kind' must be a string");
  const auto kind_str = kind_json.get<std::string>();
  const auto kind = kind_from_name(kind_str);
  if (!kind) throw ParseError(ctx + ": unknown layer kind '" + kind_str + "'");

  static const json kEmpty = json::object();
  const json& params = j.contains("params") ? j.at("params") : kEmpty;
  if (!params.is_object()) throw ParseError(ctx + ": 'params' must be an object");

  switch (*kind) {
    case LayerKind::kRelu:
      reject_unknown(params, {}, ctx);
      return LayerSpec::relu();
    case LayerKind::kBatchNorm: {
      reject_unknown(params, {"gamma", "beta", "running_mean", "running_var", "eps"}, ctx);
      BatchNormParams p;
      p.gamma = parse_param(params, "gamma", ctx, base_dir);
      p.beta = parse_param(params, "beta", ctx, base_dir);
      p.running_mean = parse_param(params, "running_mean", ctx, base_dir);
      p.running_var = parse_param(params, "running_var", ctx, base_dir);
      const json& eps = require(params, "eps", ctx);
      if (!eps.is_number()) throw ParseError(ctx + ": field 'eps' must be a number");
      p.eps = eps.get<float>();
      return LayerSpec::batchnorm(std::move(p));
    }
    case LayerKind::kMaxPool:
    case LayerKind::kAvgPool:
      reject_unknown(params, {"kernel", "stride", "padding"}, ctx);
      return {*kind, PoolParams{parse_window(params, ctx)}};
    case LayerKind::kConv2d: {
      reject_unknown(params, {"out_channels", "kernel", "stride", "padding", "weights", "bias"}, ctx);
      Conv2dParams p;
      const auto out = as_int(require(params, "out_channels", ctx), ctx, "out_channels");
      if (out < 1) throw ParseError(ctx + ": 'out_channels' must be >= 1");
      p.out_channels = static_cast<std::size_t>(out);
      p.window = parse_window(params, ctx);
      p.weights = parse_param(params, "weights", ctx, base_dir);
      p.bias = parse_param(params, "bias", ctx, base_dir);
      return LayerSpec::conv2d(std::move(p));
    }
    case LayerKind::kLinear: {
      reject_unknown(params, {"out_features", "weight", "bias"}, ctx);
      LinearParams p;
      const auto out = as_int(require(params, "out_features", ctx), ctx, "out_features");
      if (out < 1) throw ParseError(ctx + ": 'out_features' must be >= 1");
      p.out_features = static_cast<std::size_t>(out);
      p.weight = parse_param(params, "weight", ctx, base_dir);
      p.bias = parse_param(params, "bias", ctx, base_dir);
      return LayerSpec::linear(std::move(p));
    }
  }
  throw ParseError(ctx + ": unhandled kind");
}

}  // namespace detail

// Parses the JSON network description. Weight files are resolved relative to
// `base_dir`; prng directives are materialized later by validate(), once the
// channel counts are known.
inline NetworkGraph parse_network(const std::string& text,
                                  const std::filesystem::path& base_dir = {}) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("network: malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("network: top level must be an object");
  detail::reject_unknown(doc, {"input_shape", "layers"}, "network");
  const json& shape = detail::require(doc, "input_shape", "network");
  if (!shape.is_array() || shape.size() != 4) {
    throw ParseError("network: 'input_shape' must be an array of 4 integers");
  }
  std::size_t dims[4];
  for (std::size_t i = 0; i < 4; ++i) {
    if (!shape[i].is_number_integer() || shape[i].get<std::int64_t>() < 1) {
      throw ParseError("network: 'input_shape' entries must be integers >= 1");
    }
    dims[i] = shape[i].get<std::size_t>();
  }
  NetworkGraph g;
  g.input_shape = {dims[0], dims[1], dims[2], dims[3]};
  const json& layers = detail::require(doc, "layers", "network");
  if (!layers.is_array()) throw ParseError("network: 'layers' must be an array");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    g.layers.push_back(detail::parse_layer(layers[i], i, base_dir));
  }
  return g;
}

inline NetworkGraph load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open network file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_network(ss.str(), path.parent_path());
}

namespace detail {

// prng-backed running_var is shifted into [1, 3) so the variance stays positive.
inline void resolve_param(ParamTensor& p, std::size_t length, bool variance) {
  if (p.source.kind != WeightSource::Kind::kPrng) return;
  p.values = prng_vector(p.source.seed, length);
  if (variance) {
    for (float& v : p.values) v += 2.0f;
  }
}

inline void check_window(const Window& g, const std::string& ctx) {
  const auto bad = [&](const std::string& what) {
    throw ValidationError(ctx + ": " + what + " (" + to_string(g) + ")");
  };
  if (g.kernel.h < 1 || g.kernel.w < 1) bad("kernel dims must be >= 1");
  if (g.stride.h < 1 || g.stride.w < 1) bad("stride must be >= 1");
  if (g.padding.h < 0 || g.padding.w < 0) bad("padding must be >= 0");
  if (g.padding.h >= g.kernel.h || g.padding.w >= g.kernel.w) bad("padding must be < kernel");
}

inline void check_length(const ParamTensor& p, std::size_t expected, const std::string& ctx,
                         const char* field) {
  if (p.values.size() != expected) {
    throw ValidationError(ctx + ": '" + field + "' has length " +
                          std::to_string(p.values.size()) + ", expected " +
                          std::to_string(expected));
  }
}

}  // namespace detail

// Resolves prng weights, checks every parameter against the inferred shapes
// and annotates each node with its output shape.
inline NetworkGraph validate(NetworkGraph g) {
  if (!g.input_shape.valid()) {
    throw ValidationError("network: invalid input shape " + to_string(g.input_shape));
  }
  g.shapes.clear();
  g.flatten_points.clear();
  Shape4 cur = g.input_shape;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    LayerSpec& layer = g.layers[i];
    const std::string ctx = "node " + std::to_string(i) + " (" + std::string(kind_name(layer.kind)) + ")";
    switch (layer.kind) {
      case LayerKind::kRelu:
        break;
      case LayerKind::kBatchNorm: {
        auto& p = layer.bn();
        detail::resolve_param(p.gamma, cur.c, false);
        detail::resolve_param(p.beta, cur.c, false);
        detail::resolve_param(p.running_mean, cur.c, false);
        detail::resolve_param(p.running_var, cur.c, true);
        detail::check_length(p.gamma, cur.c, ctx, "gamma");
        detail::check_length(p.beta, cur.c, ctx, "beta");
        detail::check_length(p.running_mean, cur.c, ctx, "running_mean");
        detail::check_length(p.running_var, cur.c, ctx, "running_var");
        if (!(p.eps > 0.0f)) throw ValidationError(ctx + ": eps must be > 0");
        for (float v : p.running_var.values) {
          if (!(v >= 0.0f)) throw ValidationError(ctx + ": running_var must be >= 0");
        }
        break;
      }
      case LayerKind::kMaxPool:
      case LayerKind::kAvgPool:
        detail::check_window(layer.pool().window, ctx);
        break;
      case LayerKind::kConv2d: {
        auto& p = layer.conv();
        detail::check_window(p.window, ctx);
        const auto kh = static_cast<std::size_t>(p.window.kernel.h);
        const auto kw = static_cast<std::size_t>(p.window.kernel.w);
        if (p.weights.source.kind == WeightSource::Kind::kPrng) {
          const Tensor w = prng_fill(p.weights.source.seed, {p.out_channels, cur.c, kh, kw});
          p.weights.values.assign(w.data().begin(), w.data().end());
        }
        detail::resolve_param(p.bias, p.out_channels, false);
        if (p.weights.file_shape && *p.weights.file_shape != Shape4{p.out_channels, cur.c, kh, kw}) {
          throw ValidationError(ctx + ": weights file shape " + to_string(*p.weights.file_shape) +
                                ", expected " + to_string(Shape4{p.out_channels, cur.c, kh, kw}));
        }
        detail::check_length(p.weights, p.out_channels * cur.c * kh * kw, ctx, "weights");
        detail::check_length(p.bias, p.out_channels, ctx, "bias");
        break;
      }
      case LayerKind::kLinear: {
        auto& p = layer.lin();
        const std::size_t features = cur.c * cur.h * cur.w;
        detail::resolve_param(p.weight, p.out_features * features, false);
        detail::resolve_param(p.bias, p.out_features, false);
        detail::check_length(p.weight, p.out_features * features, ctx, "weight");
        detail::check_length(p.bias, p.out_features, ctx, "bias");
        g.flatten_points.push_back(i);
        break;
      }
    }
    try {
      cur = layer_output_shape(layer, cur);
    } catch (const ShapeError& e) {
      throw ValidationError(ctx + ": " + e.what());
    }
    g.shapes.push_back(cur);
  }
  return g;
}

namespace detail {

inline nlohmann::json param_json(const ParamTensor& p) {
  using nlohmann::json;
  switch (p.source.kind) {
    case WeightSource::Kind::kFile: return json{{"file", p.source.file}};
    case WeightSource::Kind::kPrng: return json{{"prng_seed", p.source.seed}};
    case WeightSource::Kind::kInline: return json{{"values", p.values}};
  }
  return json{};
}

inline nlohmann::json axis_json(const Axis2& a) { return nlohmann::json::array({a.h, a.w}); }

}  // namespace detail

// Emits the same schema parse_network() reads, preserving weight directives.
inline nlohmann::json serialize_network(const NetworkGraph& g) {
  using nlohmann::json;
  json layers = json::array();
  for (const auto& layer : g.layers) {
    json params = json::object();
    switch (layer.kind) {
      case LayerKind::kRelu:
        break;
      case LayerKind::kBatchNorm: {
        const auto& p = layer.bn();
        params = {{"gamma", detail::param_json(p.gamma)},
                  {"beta", detail::param_json(p.beta)},
                  {"running_mean", detail::param_json(p.running_mean)},
                  {"running_var", detail::param_json(p.running_var)},
                  {"eps", p.eps}};
        break;
      }
      case LayerKind::kMaxPool:
      case LayerKind::kAvgPool: {
        const auto& w = layer.pool().window;
        params = {{"kernel", detail::axis_json(w.kernel)},
                  {"stride", detail::axis_json(w.stride)},
                  {"padding", detail::axis_json(w.padding)}};
        break;
      }
      case LayerKind::kConv2d: {
        const auto& p = layer.conv();
        params = {{"out_channels", p.out_channels},
                  {"kernel", detail::axis_json(p.window.kernel)},
                  {"stride", detail::axis_json(p.window.stride)},
                  {"padding", detail::axis_json(p.window.padding)},
                  {"weights", detail::param_json(p.weights)},
                  {"bias", detail::param_json(p.bias)}};
        break;
      }
      case LayerKind::kLinear: {
        const auto& p = layer.lin();
        params = {{"out_features", p.out_features},
                  {"weight", detail::param_json(p.weight)},
                  {"bias", detail::param_json(p.bias)}};
        break;
      }
    }
    json entry = {{"kind", std::string(kind_name(layer.kind))}};
    if (!params.empty()) entry["params"] = params;
    layers.push_back(std::move(entry));
  }
  const auto& s = g.input_shape;
  return json{{"input_shape", json::array({s.n, s.c, s.h, s.w})}, {"layers", layers}};
}

// The block MaxPool(3x3, stride 1, pad 1) -> BatchNorm -> ReLU repeated
// `depth` times, with prng-seeded batchnorm parameters derived from `seed`.
inline NetworkGraph blocks_network(std::size_t depth, Shape4 input_shape, std::uint64_t seed = 0) {
  NetworkGraph g;
  g.input_shape = input_shape;
  const Window pool{{3, 3}, {1, 1}, {1, 1}};
  const auto prng = [](std::uint64_t s) {
    return ParamTensor{{}, {WeightSource::Kind::kPrng, {}, s}, std::nullopt};
  };
  for (std::size_t b = 0; b < depth; ++b) {
    const std::uint64_t base = seed * 1000003ull + 4 * b;
    g.layers.push_back(LayerSpec::maxpool(pool));
    g.layers.push_back(LayerSpec::batchnorm(
        {prng(base), prng(base + 1), prng(base + 2), prng(base + 3), 1e-5f}));
    g.layers.push_back(LayerSpec::relu());
  }
  return g;
}

}  // namespace slugplan
