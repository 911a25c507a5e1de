#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <span>
#include <thread>
#include <utility>
#include <vector>

#include "slugplan/error.hpp"
#include "slugplan/graph.hpp"
#include "slugplan/layers.hpp"
#include "slugplan/planner.hpp"
#include "slugplan/tensor.hpp"
#include "slugplan/traffic.hpp"

namespace slugplan {

struct RunResult {
  Tensor output;
  TrafficReport traffic;
};

// Runs fn(index, worker) for index in [0, count) over contiguous chunks, one
// chunk per worker.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i, std::size_t{0});
    return;
  }
  std::vector<std::jthread> threads;
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = count * w / workers;
    const std::size_t end = count * (w + 1) / workers;
    threads.emplace_back([&fn, begin, end, w] {
      for (std::size_t i = begin; i < end; ++i) fn(i, w);
    });
  }
}

// Two flat scratch arrays; steps read the active one and write the standby
// one, then swap.
class ScratchBuffers {
 public:
  explicit ScratchBuffers(std::size_t capacity) : a_(capacity), b_(capacity) {}

  std::span<float> active() { return flipped_ ? b_ : a_; }
  std::span<float> standby() { return flipped_ ? a_ : b_; }
  void swap() { flipped_ = !flipped_; }
  std::size_t capacity() const { return a_.size(); }

 private:
  std::vector<float> a_;
  std::vector<float> b_;
  bool flipped_ = false;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Whole-tensor layer, parallel over (batch, channel) planes where the kernel
// allows it.
inline Tensor apply_layer_parallel(const LayerSpec& layer, const Tensor& x, std::size_t workers) {
  const Shape4 in = x.shape();
  if (workers <= 1 || !is_optimizable(layer.kind)) return apply_layer(layer, x);
  const Shape4 out_shape = layer_output_shape(layer, in);
  Tensor y(out_shape);
  const auto ih = static_cast<std::int64_t>(in.h), iw = static_cast<std::int64_t>(in.w);
  const auto oh = static_cast<std::int64_t>(out_shape.h), ow = static_cast<std::int64_t>(out_shape.w);
  std::vector<BatchNormChannel> bn;
  if (layer.kind == LayerKind::kBatchNorm) {
    check_batchnorm_lengths(layer.bn(), in.c);
    for (std::size_t c = 0; c < in.c; ++c) bn.push_back(batchnorm_channel(layer.bn(), c));
  }
  parallel_for(in.n * in.c, workers, [&](std::size_t plane, std::size_t) {
    const std::size_t n = plane / in.c, c = plane % in.c;
    const auto src = x.plane(n, c);
    auto dst = y.plane(n, c);
    switch (layer.kind) {
      case LayerKind::kRelu:
        std::copy(src.begin(), src.end(), dst.begin());
        relu_inplace(dst);
        break;
      case LayerKind::kBatchNorm:
        std::copy(src.begin(), src.end(), dst.begin());
        batchnorm_inplace(dst, bn[c]);
        break;
      default:
        pool_window_region(layer.kind, layer.pool().window, {src.data(), {{0, ih}, {0, iw}}, ih, iw},
                           {dst.data(), {{0, oh}, {0, ow}}, oh, ow});
        break;
    }
  });
  return y;
}

}  // namespace detail

// Layer-by-layer reference: each layer's whole-tensor kernel in order. The
// report charges every layer a full input read, full output write and one
// read of its parameters.
inline RunResult run_breadth_first(const NetworkGraph& graph, const Tensor& x,
                                   std::size_t workers = 1, std::size_t element_size = 4) {
  const NetworkGraph& g = graph;
  if (!g.validated()) return run_breadth_first(validate(graph), x, workers, element_size);
  if (x.shape() != g.input_shape) {
    throw ShapeError("run_breadth_first: input shape " + to_string(x.shape()) +
                     " does not match network input " + to_string(g.input_shape));
  }
  RunResult r{x, {}};
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const auto t0 = detail::Clock::now();
    const Tensor& in = r.output;
    CostTally t;
    t.read_elements = in.size();
    t.param_elements = layer_param_elements(g.layers[i]);
    Tensor out = detail::apply_layer_parallel(g.layers[i], in, workers);
    t.written_elements = out.size();
    t.op_count = out.size() * layer_ops_per_output(g.layers[i], in.shape());
    r.output = std::move(out);
    TrafficEntry e = to_entry(layer_label(g, i), t, element_size);
    e.wall_ms = detail::ms_since(t0);
    r.traffic.parts.push_back(std::move(e));
  }
  return r;
}

namespace detail {

// Applies an elementwise op to the in-plane cells of a scratch region for
// `channels` consecutive channel slices. Returns the number of cells touched.
inline std::uint64_t elementwise_on_region(const LayerSpec& layer, std::span<float> buf,
                                           const Region& r, std::int64_t height,
                                           std::int64_t width, std::size_t first_channel,
                                           std::size_t channels) {
  const std::int64_t cols = r.cols.extent();
  const std::int64_t y0 = std::max<std::int64_t>(r.rows.lo, 0), y1 = std::min(r.rows.hi, height);
  const std::int64_t x0 = std::max<std::int64_t>(r.cols.lo, 0), x1 = std::min(r.cols.hi, width);
  if (y1 <= y0 || x1 <= x0) return 0;
  std::uint64_t touched = 0;
  const auto slice = static_cast<std::size_t>(r.elements());
  for (std::size_t ch = 0; ch < channels; ++ch) {
    BatchNormChannel bn{};
    if (layer.kind == LayerKind::kBatchNorm) bn = batchnorm_channel(layer.bn(), first_channel + ch);
    for (std::int64_t y = y0; y < y1; ++y) {
      auto row = buf.subspan(ch * slice + static_cast<std::size_t>((y - r.rows.lo) * cols + (x0 - r.cols.lo)),
                             static_cast<std::size_t>(x1 - x0));
      if (layer.kind == LayerKind::kRelu) {
        relu_inplace(row);
      } else {
        batchnorm_inplace(row, bn);
      }
      touched += row.size();
    }
  }
  return touched;
}

// Runs one tiled sequence for the (batch, channel group) unit.
inline CostTally run_sequence_unit(const NetworkGraph& g, const Stack& stack,
                                   std::span<const Step> steps, const TileGrid& grid,
                                   const Tensor& in, Tensor& out, std::size_t batch,
                                   std::size_t c0, std::size_t channels, ScratchBuffers& scratch,
                                   std::vector<std::uint8_t>& marks) {
  CostTally cost;
  const std::int64_t h0 = grid.heights[0], w0 = grid.widths[0];
  const std::size_t m = steps.size();
  const PadPolicy load_policy =
      steps[0].has_pool() && stack.ops[*steps[0].pool_op].kind == LayerKind::kMaxPool
          ? PadPolicy::kNegInf
          : PadPolicy::kZero;
  marks.assign(channels * static_cast<std::size_t>(h0 * w0), 0);
  std::uint64_t loaded = 0, unique = 0;

  for (std::size_t i = 0; i < grid.row_bands(); ++i) {
    for (std::size_t j = 0; j < grid.col_bands(); ++j) {
      // Load the composed input region.
      const Region r0 = grid.region(0, i, j);
      const auto slice0 = static_cast<std::size_t>(r0.elements());
      for (std::size_t ch = 0; ch < channels; ++ch) {
        extract_region_into(in, batch, c0 + ch, r0, load_policy,
                            scratch.active().subspan(ch * slice0, slice0));
        std::uint8_t* mk = marks.data() + ch * static_cast<std::size_t>(h0 * w0);
        for (std::int64_t y = std::max<std::int64_t>(r0.rows.lo, 0); y < std::min(r0.rows.hi, h0); ++y) {
          for (std::int64_t x = std::max<std::int64_t>(r0.cols.lo, 0); x < std::min(r0.cols.hi, w0); ++x) {
            ++loaded;
            auto& flag = mk[y * w0 + x];
            if (!flag) {
              flag = 1;
              ++unique;
            }
          }
        }
      }

      for (std::size_t k = 0; k < m; ++k) {
        const Step& st = steps[k];
        const Region rk = grid.region(k, i, j);
        for (std::size_t o = st.first_op; o < st.end_op; ++o) {
          const StackOp& op = stack.ops[o];
          const LayerSpec& layer = g.layers[op.node];
          if (classify(op.kind) == OpClass::kPooling) {
            const Region rn = grid.region(k + 1, i, j);
            const auto slice_in = static_cast<std::size_t>(rk.elements());
            const auto slice_out = static_cast<std::size_t>(rn.elements());
            for (std::size_t ch = 0; ch < channels; ++ch) {
              pool_window_region(op.kind, op.window,
                                 {scratch.active().data() + ch * slice_in, rk, grid.heights[k], grid.widths[k]},
                                 {scratch.standby().data() + ch * slice_out, rn, grid.heights[k + 1],
                                  grid.widths[k + 1]});
            }
            cost.op_count += static_cast<std::uint64_t>(rn.clipped_elements(grid.heights[k + 1], grid.widths[k + 1])) *
                             channels * stack_op_factor(op);
            scratch.swap();
            continue;
          }
          const bool after_pool = st.has_pool() && o > *st.pool_op;
          const std::size_t b = after_pool ? k + 1 : k;
          const std::uint64_t touched =
              elementwise_on_region(layer, scratch.active(), grid.region(b, i, j), grid.heights[b],
                                    grid.widths[b], c0, channels);
          cost.op_count += touched * stack_op_factor(op);
          cost.param_elements += stack_op_params_per_channel(op) * channels;
        }
      }

      // Final patch is entirely inside the output plane.
      const Region rm = grid.region(m, i, j);
      const auto slice_m = static_cast<std::size_t>(rm.elements());
      const auto ow = static_cast<std::size_t>(grid.widths[m]);
      for (std::size_t ch = 0; ch < channels; ++ch) {
        auto dst = out.plane(batch, c0 + ch);
        const float* src = scratch.active().data() + ch * slice_m;
        for (std::int64_t y = rm.rows.lo; y < rm.rows.hi; ++y) {
          const auto cols = static_cast<std::size_t>(rm.cols.extent());
          std::copy(src, src + cols, dst.data() + static_cast<std::size_t>(y) * ow + static_cast<std::size_t>(rm.cols.lo));
          src += cols;
          cost.written_elements += cols;
        }
      }
    }
  }
  cost.read_elements = loaded;
  cost.redundant_elements = loaded - unique;
  return cost;
}

}  // namespace detail

// Depth-first execution of a plan. Opaque layers run whole-tensor; every
// sequence runs tile by tile inside two scratch buffers, and its output is
// materialized once before the next sequence reads it.
inline RunResult run_depth_first(const ExecutionPlan& p, const Tensor& x, std::size_t workers = 0) {
  if (!p.graph) throw PlanningError("run_depth_first: empty plan");
  const NetworkGraph& g = *p.graph;
  if (x.shape() != g.input_shape) {
    throw ShapeError("run_depth_first: input shape " + to_string(x.shape()) +
                     " does not match planned input " + to_string(g.input_shape));
  }
  if (workers == 0) workers = p.device.worker_count;
  const std::size_t es = p.device.element_size;
  const auto capacity = static_cast<std::size_t>(p.scratch_buffer_elements());

  RunResult r{x, {}};
  for (const auto& item : p.items) {
    const auto t0 = detail::Clock::now();
    if (!item.is_stack) {
      const Tensor& in = r.output;
      CostTally t;
      t.read_elements = in.size();
      t.param_elements = layer_param_elements(g.layers[item.index]);
      Tensor out = detail::apply_layer_parallel(g.layers[item.index], in, workers);
      t.written_elements = out.size();
      t.op_count = out.size() * layer_ops_per_output(g.layers[item.index], in.shape());
      r.output = std::move(out);
      TrafficEntry e = to_entry(layer_label(g, item.index), t, es);
      e.wall_ms = detail::ms_since(t0);
      r.traffic.parts.push_back(std::move(e));
      continue;
    }
    const PlannedStack& ps = p.stacks[item.index];
    const StackTemplate& tmpl = p.template_of(ps);
    const std::span<const Step> all_steps(tmpl.steps);
    if (r.output.shape() != ps.stack.input_shape()) {
      throw PlanningError("run_depth_first: stack " + std::to_string(item.index) + " expects " +
                          to_string(ps.stack.input_shape()) + ", got " + to_string(r.output.shape()));
    }
    for (std::size_t q = 0; q < tmpl.sequences.size(); ++q) {
      const auto ts = detail::Clock::now();
      const Sequence& seq = tmpl.sequences[q];
      const auto steps = all_steps.subspan(seq.first_step, seq.step_count());
      CostTally total;
      if (seq.streamed) {
        for (std::size_t o = steps.front().first_op; o < steps.back().end_op; ++o) {
          const std::size_t node = ps.stack.ops[o].node;
          const Tensor& in = r.output;
          total.read_elements += in.size();
          total.param_elements += layer_param_elements(g.layers[node]);
          Tensor out = detail::apply_layer_parallel(g.layers[node], in, workers);
          total.written_elements += out.size();
          total.op_count += out.size() * layer_ops_per_output(g.layers[node], in.shape());
          r.output = std::move(out);
        }
      } else {
        const TileGrid grid = tile_grid(steps, seq.tile);
        const Tensor& in = r.output;
        Tensor out(steps.back().out);
        const Shape4 s = in.shape();
        const std::size_t cpt = seq.tile.channels;
        const std::size_t groups = (s.c + cpt - 1) / cpt;
        const std::size_t units = s.n * groups;
        std::vector<CostTally> per_unit(units);
        const std::size_t nw = std::max<std::size_t>(1, std::min(workers, units));
        std::vector<ScratchBuffers> scratch;
        std::vector<std::vector<std::uint8_t>> marks(nw);
        scratch.reserve(nw);
        for (std::size_t w = 0; w < nw; ++w) scratch.emplace_back(capacity);
        parallel_for(units, nw, [&](std::size_t u, std::size_t w) {
          const std::size_t batch = u / groups;
          const std::size_t c0 = (u % groups) * cpt;
          const std::size_t ch = std::min(cpt, s.c - c0);
          per_unit[u] = detail::run_sequence_unit(g, ps.stack, steps, grid, in, out, batch, c0, ch,
                                                  scratch[w], marks[w]);
        });
        for (const auto& c : per_unit) total += c;
        r.output = std::move(out);
      }
      TrafficEntry e = to_entry(sequence_label(item.index, q), total, es);
      e.wall_ms = detail::ms_since(ts);
      r.traffic.parts.push_back(std::move(e));
    }
  }
  return r;
}

}  // namespace slugplan
