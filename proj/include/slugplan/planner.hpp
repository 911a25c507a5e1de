#pragma once

// Compile phase: find runs of fusable layers (stacks), group their operations
// into steps (at most one pooling op each), and bundle steps into sequences
// whose two-buffer scratch requirement fits the device budget.

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slugplan/error.hpp"
#include "slugplan/graph.hpp"
#include "slugplan/layers.hpp"
#include "slugplan/tensor.hpp"

namespace slugplan {

struct DeviceSpec {
  std::size_t lanes = 128;
  std::size_t scratch_bytes = 16384;
  std::size_t element_size = 4;
  std::size_t worker_count = 1;

  void check() const {
    if (lanes < 1) throw ValidationError("device: lanes must be >= 1");
    if (element_size < 1) throw ValidationError("device: element_size must be >= 1");
    if (scratch_bytes < element_size) {
      throw ValidationError("device: scratch_bytes must be >= element_size");
    }
    if (worker_count < 1) throw ValidationError("device: worker_count must be >= 1");
  }

  friend bool operator==(const DeviceSpec&, const DeviceSpec&) = default;
};

struct PlanPolicy {
  // 0 means unrestricted.
  std::size_t max_steps_per_sequence = 0;
  std::size_t channels_per_tile = 1;
  // When false the tile stays at its base (or shrunk) extent.
  bool grow_tile = true;

  void check() const {
    if (channels_per_tile < 1) throw ValidationError("policy: channels_per_tile must be >= 1");
  }

  friend bool operator==(const PlanPolicy&, const PlanPolicy&) = default;
};

// Output patch of one tile: width x height spatial positions times `channels`.
struct TileGeometry {
  std::int64_t width = 1;
  std::int64_t height = 1;
  std::size_t channels = 1;

  std::int64_t positions() const { return width * height; }
  friend bool operator==(const TileGeometry&, const TileGeometry&) = default;
};

inline std::string to_string(const TileGeometry& t) {
  return std::to_string(t.width) + "x" + std::to_string(t.height);
}

// ---------------------------------------------------------------------------
// Stacks

struct StackOp {
  LayerKind kind;
  Window window;  // identity for elementwise ops
  std::size_t node;
  Shape4 in;
  Shape4 out;
  friend bool operator==(const StackOp&, const StackOp&) = default;
};

struct Stack {
  std::size_t first_node = 0;
  std::size_t end_node = 0;  // exclusive
  std::vector<StackOp> ops;

  const Shape4& input_shape() const { return ops.front().in; }
  const Shape4& output_shape() const { return ops.back().out; }
};

struct StackedNode {
  bool is_stack = false;
  std::size_t index = 0;  // graph node index, or index into StackedGraph::stacks
};

struct StackedGraph {
  std::vector<StackedNode> nodes;
  std::vector<Stack> stacks;
};

// Every maximal run of optimizable layers becomes one stack, including runs of
// length 1. Opaque layers pass through.
inline StackedGraph detect_stacks(const NetworkGraph& g) {
  if (!g.validated()) throw PlanningError("detect_stacks: graph is not validated");
  StackedGraph out;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& layer = g.layers[i];
    if (!is_optimizable(layer.kind)) {
      out.nodes.push_back({false, i});
      continue;
    }
    const bool extend = !out.nodes.empty() && out.nodes.back().is_stack &&
                        out.stacks[out.nodes.back().index].end_node == i;
    if (!extend) {
      out.nodes.push_back({true, out.stacks.size()});
      out.stacks.push_back(Stack{i, i, {}});
    }
    Stack& s = out.stacks.back();
    s.ops.push_back({layer.kind, layer.geometry(), i, g.input_of(i), g.shapes[i]});
    s.end_node = i + 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Steps

struct Step {
  std::size_t first_op = 0;
  std::size_t end_op = 0;  // exclusive
  std::optional<std::size_t> pool_op;
  Window geometry;  // the pooling window, or identity
  Shape4 in;
  Shape4 out;

  bool has_pool() const { return pool_op.has_value(); }
  friend bool operator==(const Step&, const Step&) = default;
};

// Greedy grouping in network order: an elementwise op always joins the current
// step; a pooling op joins unless the step already holds one.
inline std::vector<Step> build_steps(const Stack& s) {
  if (s.ops.empty()) throw PlanningError("build_steps: empty stack");
  std::vector<Step> steps;
  Step cur{0, 0, std::nullopt, Window::identity(), s.ops[0].in, s.ops[0].in};
  for (std::size_t i = 0; i < s.ops.size(); ++i) {
    const StackOp& op = s.ops[i];
    if (classify(op.kind) == OpClass::kPooling) {
      if (cur.has_pool()) {
        steps.push_back(cur);
        cur = Step{i, i, std::nullopt, Window::identity(), op.in, op.in};
      }
      cur.pool_op = i;
      cur.geometry = op.window;
    }
    cur.end_op = i + 1;
    cur.out = op.out;
  }
  steps.push_back(cur);
  return steps;
}

// ---------------------------------------------------------------------------
// Geometry

// Input coordinates an output interval depends on for one window axis.
constexpr Interval backward_interval(const Interval& out, std::int64_t kernel, std::int64_t stride,
                                     std::int64_t padding) {
  return {out.lo * stride - padding, (out.hi - 1) * stride + kernel - padding};
}

constexpr Region backward_window(const Region& out, const Window& w) {
  return {backward_interval(out.rows, w.kernel.h, w.stride.h, w.padding.h),
          backward_interval(out.cols, w.kernel.w, w.stride.w, w.padding.w)};
}

inline Region backward_geometry(const Region& out, const Step& step) {
  if (!step.has_pool()) return out;
  return backward_window(out, step.geometry);
}

// Regions at every step boundary for an output region of the last step:
// result[0] is the sequence input region, result[steps.size()] == out.
inline std::vector<Region> boundary_regions(std::span<const Step> steps, const Region& out) {
  std::vector<Region> regions(steps.size() + 1);
  regions.back() = out;
  for (std::size_t k = steps.size(); k-- > 0;) regions[k] = backward_geometry(regions[k + 1], steps[k]);
  return regions;
}

// ---------------------------------------------------------------------------
// Resource model

struct Consumption {
  // Region size x channels at each step boundary, sequence input first.
  std::vector<std::int64_t> boundary_elements;
  // Max over consecutive boundaries of (in + out): the two scratch buffers.
  std::int64_t elements = 0;
  std::int64_t bytes = 0;
  // Largest single boundary; one scratch buffer must hold this much.
  std::int64_t buffer_elements = 0;

  std::int64_t input_elements() const { return boundary_elements.front(); }
  std::int64_t output_elements() const { return boundary_elements.back(); }
  friend bool operator==(const Consumption&, const Consumption&) = default;
};

inline Consumption resource_consumption(std::span<const Step> steps, const TileGeometry& tile,
                                        const DeviceSpec& dev) {
  const Region out{{0, tile.height}, {0, tile.width}};
  const auto regions = boundary_regions(steps, out);
  Consumption c;
  const auto ch = static_cast<std::int64_t>(tile.channels);
  for (const auto& r : regions) c.boundary_elements.push_back(r.elements() * ch);
  for (std::size_t k = 0; k + 1 < c.boundary_elements.size(); ++k) {
    c.elements = std::max(c.elements, c.boundary_elements[k] + c.boundary_elements[k + 1]);
  }
  if (steps.empty()) c.elements = c.boundary_elements.front();
  c.buffer_elements = *std::max_element(c.boundary_elements.begin(), c.boundary_elements.end());
  c.bytes = c.elements * static_cast<std::int64_t>(dev.element_size);
  return c;
}

// Most-square factorization of `lanes` into width x height, width a multiple
// of 8 when lanes allows it; ties prefer the wider tile.
inline TileGeometry base_tile(std::size_t lanes, std::size_t channels) {
  const auto n = static_cast<std::int64_t>(lanes);
  const bool align8 = n % 8 == 0;
  std::int64_t best_w = n;
  std::int64_t best_diff = -1;
  for (std::int64_t w = 1; w <= n; ++w) {
    if (n % w != 0 || (align8 && w % 8 != 0)) continue;
    const std::int64_t h = n / w;
    const std::int64_t diff = w > h ? w - h : h - w;
    if (best_diff < 0 || diff < best_diff || (diff == best_diff && w > best_w)) {
      best_w = w;
      best_diff = diff;
    }
  }
  return {best_w, n / best_w, channels};
}

// ---------------------------------------------------------------------------
// Traffic cost of one sequence (depth-first) and of the same ops run
// breadth-first. Counts are elements; callers scale by element_size.

struct CostTally {
  std::uint64_t read_elements = 0;
  std::uint64_t param_elements = 0;
  std::uint64_t written_elements = 0;
  std::uint64_t redundant_elements = 0;
  std::uint64_t op_count = 0;

  std::uint64_t traffic_elements() const { return read_elements + param_elements + written_elements; }
  CostTally& operator+=(const CostTally& o) {
    read_elements += o.read_elements;
    param_elements += o.param_elements;
    written_elements += o.written_elements;
    redundant_elements += o.redundant_elements;
    op_count += o.op_count;
    return *this;
  }
  friend bool operator==(const CostTally&, const CostTally&) = default;
};

// Arithmetic tally per element an op produces, for stack-resident ops.
constexpr std::uint64_t stack_op_factor(const StackOp& op) {
  switch (op.kind) {
    case LayerKind::kRelu: return 1;
    case LayerKind::kBatchNorm: return 4;
    case LayerKind::kMaxPool: return static_cast<std::uint64_t>(op.window.kernel.h * op.window.kernel.w);
    case LayerKind::kAvgPool: return static_cast<std::uint64_t>(op.window.kernel.h * op.window.kernel.w) + 1;
    default: return 0;
  }
}

constexpr std::uint64_t stack_op_params_per_channel(const StackOp& op) {
  return op.kind == LayerKind::kBatchNorm ? 4 : 0;
}

// Splits [0, extent) into consecutive bands of `band` (the last one clipped).
inline std::vector<Interval> band_intervals(std::int64_t extent, std::int64_t band) {
  std::vector<Interval> out;
  for (std::int64_t lo = 0; lo < extent; lo += band) out.push_back({lo, std::min(lo + band, extent)});
  return out;
}

// Per-axis tile bands at each step boundary of a sequence. The tile grid is a
// cross product of row bands and column bands, so every region is
// rows[k][i] x cols[k][j].
struct TileGrid {
  std::vector<std::vector<Interval>> rows;  // [boundary][band]
  std::vector<std::vector<Interval>> cols;
  std::vector<std::int64_t> heights;  // plane extent at each boundary
  std::vector<std::int64_t> widths;

  std::size_t row_bands() const { return rows.back().size(); }
  std::size_t col_bands() const { return cols.back().size(); }
  Region region(std::size_t boundary, std::size_t i, std::size_t j) const {
    return {rows[boundary][i], cols[boundary][j]};
  }
};

inline TileGrid tile_grid(std::span<const Step> steps, const TileGeometry& tile) {
  TileGrid g;
  const std::size_t m = steps.size();
  g.rows.resize(m + 1);
  g.cols.resize(m + 1);
  g.heights.resize(m + 1);
  g.widths.resize(m + 1);
  g.heights[m] = static_cast<std::int64_t>(steps.back().out.h);
  g.widths[m] = static_cast<std::int64_t>(steps.back().out.w);
  g.rows[m] = band_intervals(g.heights[m], tile.height);
  g.cols[m] = band_intervals(g.widths[m], tile.width);
  for (std::size_t k = m; k-- > 0;) {
    const Window w = steps[k].has_pool() ? steps[k].geometry : Window::identity();
    g.heights[k] = static_cast<std::int64_t>(steps[k].in.h);
    g.widths[k] = static_cast<std::int64_t>(steps[k].in.w);
    for (const auto& r : g.rows[k + 1]) g.rows[k].push_back(backward_interval(r, w.kernel.h, w.stride.h, w.padding.h));
    for (const auto& c : g.cols[k + 1]) g.cols[k].push_back(backward_interval(c, w.kernel.w, w.stride.w, w.padding.w));
  }
  return g;
}

namespace detail {

inline std::int64_t clipped_sum(const std::vector<Interval>& bands, std::int64_t bound) {
  std::int64_t s = 0;
  for (const auto& b : bands) s += b.clipped_extent(bound);
  return s;
}

// |union of bands ∩ [0, bound)|; bands are sorted by lo and hi.
inline std::int64_t clipped_union(const std::vector<Interval>& bands, std::int64_t bound) {
  std::int64_t total = 0;
  std::int64_t covered_to = std::numeric_limits<std::int64_t>::min();
  for (const auto& b : bands) {
    const std::int64_t lo = std::max({b.lo, std::int64_t{0}, covered_to});
    const std::int64_t hi = std::min(b.hi, bound);
    if (hi > lo) total += hi - lo;
    covered_to = std::max(covered_to, hi);
  }
  return total;
}

}  // namespace detail

// Modeled depth-first cost of running `steps` (consecutive, from `stack`) as
// one tiled sequence.
inline CostTally sequence_cost(const Stack& stack, std::span<const Step> steps,
                               const TileGeometry& tile) {
  const TileGrid grid = tile_grid(steps, tile);
  const Shape4& in = steps.front().in;
  const auto planes = static_cast<std::uint64_t>(in.n * in.c);
  const auto cells = [&](std::size_t k) {
    return static_cast<std::uint64_t>(detail::clipped_sum(grid.rows[k], grid.heights[k]) *
                                      detail::clipped_sum(grid.cols[k], grid.widths[k]));
  };
  CostTally t;
  const std::uint64_t loaded = cells(0);
  const auto uni = static_cast<std::uint64_t>(detail::clipped_union(grid.rows[0], grid.heights[0]) *
                                              detail::clipped_union(grid.cols[0], grid.widths[0]));
  t.read_elements = loaded * planes;
  t.redundant_elements = (loaded - uni) * planes;
  t.written_elements = cells(steps.size()) * planes;
  const auto tiles_per_plane = static_cast<std::uint64_t>(grid.row_bands() * grid.col_bands());
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const Step& st = steps[k];
    for (std::size_t o = st.first_op; o < st.end_op; ++o) {
      const StackOp& op = stack.ops[o];
      const bool after_pool = st.has_pool() && o >= *st.pool_op;
      t.op_count += cells(after_pool ? k + 1 : k) * planes * stack_op_factor(op);
      t.param_elements += tiles_per_plane * planes * stack_op_params_per_channel(op);
    }
  }
  return t;
}

// Cost of the same ops executed layer by layer over whole tensors.
inline CostTally breadth_first_cost(const Stack& stack, std::size_t first_op, std::size_t end_op) {
  CostTally t;
  for (std::size_t o = first_op; o < end_op; ++o) {
    const StackOp& op = stack.ops[o];
    t.read_elements += op.in.elements();
    t.written_elements += op.out.elements();
    t.param_elements += op.in.c * stack_op_params_per_channel(op);
    t.op_count += op.out.elements() * stack_op_factor(op);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Sequences

struct Sequence {
  std::size_t first_step = 0;
  std::size_t end_step = 0;  // exclusive
  TileGeometry tile;
  std::int64_t outputs_per_lane = 1;
  Consumption consumption;
  // Executed layer by layer because tiling would move more bytes than the
  // breadth-first equivalent (a lone pooling step with halo overlap).
  bool streamed = false;

  std::size_t step_count() const { return end_step - first_step; }
  friend bool operator==(const Sequence&, const Sequence&) = default;
};

namespace detail {

inline std::int64_t budget_elements(const DeviceSpec& dev) {
  return static_cast<std::int64_t>(dev.scratch_bytes / dev.element_size);
}

inline bool fits(std::span<const Step> steps, const TileGeometry& tile, const DeviceSpec& dev) {
  return resource_consumption(steps, tile, dev).bytes <= static_cast<std::int64_t>(dev.scratch_bytes);
}

inline TileGeometry halve_longer(TileGeometry t) {
  if (t.width >= t.height) {
    t.width = std::max<std::int64_t>(1, t.width / 2);
  } else {
    t.height = std::max<std::int64_t>(1, t.height / 2);
  }
  return t;
}

}  // namespace detail

// Grows the tile from `start` by doubling its longer axis while the scratch
// requirement stays within budget. An axis that already spans the output plane
// is not grown further; growth stops once both do.
inline TileGeometry choose_tile(const DeviceSpec& dev, std::span<const Step> steps,
                                TileGeometry start) {
  const auto plane_h = static_cast<std::int64_t>(steps.back().out.h);
  const auto plane_w = static_cast<std::int64_t>(steps.back().out.w);
  TileGeometry t = start;
  for (;;) {
    const bool w_done = t.width >= plane_w;
    const bool h_done = t.height >= plane_h;
    if (w_done && h_done) break;
    TileGeometry next = t;
    const bool grow_width = h_done || (!w_done && t.width >= t.height);
    if (grow_width) {
      next.width *= 2;
    } else {
      next.height *= 2;
    }
    if (!detail::fits(steps, next, dev)) break;
    t = next;
  }
  return t;
}

// Greedy left-to-right packing: a step joins the open sequence unless that
// would exceed the scratch budget (or the step cap, or make the tiled
// sequence move more bytes than running it breadth-first); then the sequence
// is closed and a new one starts with that step.
inline std::vector<Sequence> pack_sequences(const Stack& stack, const std::vector<Step>& steps,
                                            const DeviceSpec& dev, const PlanPolicy& policy = {}) {
  dev.check();
  policy.check();
  const std::size_t channels = std::min(policy.channels_per_tile, stack.input_shape().c);
  const TileGeometry base = base_tile(dev.lanes, channels);
  const std::span<const Step> all(steps);

  const auto dominated = [&](std::size_t first, std::size_t end, const TileGeometry& tile) {
    const auto sub = all.subspan(first, end - first);
    const auto df = sequence_cost(stack, sub, tile).traffic_elements();
    const auto bf = breadth_first_cost(stack, sub.front().first_op, sub.back().end_op).traffic_elements();
    return df <= bf;
  };

  std::vector<Sequence> out;
  std::size_t i = 0;
  while (i < steps.size()) {
    Sequence seq;
    seq.first_step = i;
    seq.end_step = i + 1;
    TileGeometry tile = base;
    if (!detail::fits(all.subspan(i, 1), tile, dev)) {
      while (!detail::fits(all.subspan(i, 1), tile, dev)) {
        if (tile.width == 1 && tile.height == 1) {
          const auto need = resource_consumption(all.subspan(i, 1), tile, dev);
          throw PlanningError("step " + std::to_string(i) + " (node " +
                              std::to_string(stack.ops[steps[i].first_op].node) +
                              ") needs at least " + std::to_string(need.bytes) +
                              " scratch bytes at a 1x1 tile; budget is " +
                              std::to_string(dev.scratch_bytes));
        }
        tile = detail::halve_longer(tile);
      }
    } else {
      while (seq.end_step < steps.size()) {
        if (policy.max_steps_per_sequence != 0 &&
            seq.step_count() >= policy.max_steps_per_sequence) {
          break;
        }
        const std::size_t end = seq.end_step + 1;
        if (!detail::fits(all.subspan(i, end - i), base, dev)) break;
        if (!dominated(i, end, base)) break;
        seq.end_step = end;
      }
      if (policy.grow_tile) tile = choose_tile(dev, all.subspan(i, seq.step_count()), base);
    }
    const auto sub = all.subspan(i, seq.step_count());
    seq.tile = tile;
    seq.outputs_per_lane = std::max<std::int64_t>(
        1, tile.positions() / static_cast<std::int64_t>(dev.lanes));
    seq.consumption = resource_consumption(sub, tile, dev);
    seq.streamed = !dominated(seq.first_step, seq.end_step, tile);
    out.push_back(seq);
    i = seq.end_step;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Plans

// Steps and sequences for one structurally distinct stack; identical stacks
// (same op kinds, windows and shapes) share a template.
struct StackTemplate {
  std::string key;
  std::uint64_t hash = 0;
  std::vector<Step> steps;
  std::vector<Sequence> sequences;
};

struct PlannedStack {
  Stack stack;
  std::size_t template_id = 0;
};

struct PlanItem {
  bool is_stack = false;
  std::size_t index = 0;  // graph node (opaque) or PlannedStack index
};

struct ExecutionPlan {
  std::shared_ptr<const NetworkGraph> graph;
  DeviceSpec device;
  PlanPolicy policy;
  std::vector<PlanItem> items;
  std::vector<PlannedStack> stacks;
  std::vector<StackTemplate> templates;

  const StackTemplate& template_of(const PlannedStack& s) const { return templates.at(s.template_id); }

  // Elements one scratch buffer must hold for any sequence of the plan.
  std::int64_t scratch_buffer_elements() const {
    std::int64_t m = 0;
    for (const auto& t : templates) {
      for (const auto& seq : t.sequences) {
        if (!seq.streamed) m = std::max(m, seq.consumption.buffer_elements);
      }
    }
    return m;
  }

  std::size_t sequence_count() const {
    std::size_t n = 0;
    for (const auto& s : stacks) n += template_of(s).sequences.size();
    return n;
  }
};

inline std::string structural_key(const Stack& s, const DeviceSpec& dev, const PlanPolicy& policy) {
  std::string key = to_string(s.input_shape());
  for (const auto& op : s.ops) {
    key += "|";
    key += kind_name(op.kind);
    if (classify(op.kind) == OpClass::kPooling) key += "(" + to_string(op.window) + ")";
  }
  key += "|lanes=" + std::to_string(dev.lanes) + ",scratch=" + std::to_string(dev.scratch_bytes) +
         ",es=" + std::to_string(dev.element_size) +
         ",max_steps=" + std::to_string(policy.max_steps_per_sequence) +
         ",cpt=" + std::to_string(policy.channels_per_tile) + ",grow=" + (policy.grow_tile ? "1" : "0");
  return key;
}

// FNV-1a over the structural key.
inline std::uint64_t structural_hash(const std::string& key) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : key) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline ExecutionPlan plan(NetworkGraph g, const DeviceSpec& dev, const PlanPolicy& policy = {}) {
  dev.check();
  policy.check();
  if (!g.validated()) g = validate(std::move(g));
  ExecutionPlan p;
  p.device = dev;
  p.policy = policy;
  StackedGraph stacked = detect_stacks(g);
  std::map<std::string, std::size_t> by_key;
  for (const auto& node : stacked.nodes) {
    if (!node.is_stack) {
      p.items.push_back({false, node.index});
      continue;
    }
    Stack& s = stacked.stacks[node.index];
    const std::string key = structural_key(s, dev, policy);
    auto [it, inserted] = by_key.try_emplace(key, p.templates.size());
    if (inserted) {
      StackTemplate t;
      t.key = key;
      t.hash = structural_hash(key);
      t.steps = build_steps(s);
      t.sequences = pack_sequences(s, t.steps, dev, policy);
      p.templates.push_back(std::move(t));
    }
    p.items.push_back({true, p.stacks.size()});
    p.stacks.push_back({std::move(s), it->second});
  }
  p.graph = std::make_shared<const NetworkGraph>(std::move(g));
  return p;
}

}  // namespace slugplan
