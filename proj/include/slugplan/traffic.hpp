#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "slugplan/graph.hpp"
#include "slugplan/layers.hpp"
#include "slugplan/planner.hpp"

namespace slugplan {

// Bytes charged to main memory by one layer (breadth-first) or one sequence
// (depth-first). Intermediates that stay in scratch buffers are not charged.
struct TrafficEntry {
  std::string label;
  std::uint64_t bytes_read_data = 0;
  std::uint64_t bytes_read_params = 0;
  std::uint64_t bytes_written = 0;
  std::uint64_t redundant_elements = 0;
  std::uint64_t op_count = 0;
  double wall_ms = 0.0;

  std::uint64_t bytes_read() const { return bytes_read_data + bytes_read_params; }
  std::uint64_t bytes_total() const { return bytes_read() + bytes_written; }
  std::uint64_t data_bytes() const { return bytes_read_data + bytes_written; }

  bool same_counters(const TrafficEntry& o) const {
    return label == o.label && bytes_read_data == o.bytes_read_data &&
           bytes_read_params == o.bytes_read_params && bytes_written == o.bytes_written &&
           redundant_elements == o.redundant_elements && op_count == o.op_count;
  }
};

struct TrafficReport {
  std::vector<TrafficEntry> parts;

  TrafficEntry total() const {
    TrafficEntry t;
    t.label = "total";
    for (const auto& p : parts) {
      t.bytes_read_data += p.bytes_read_data;
      t.bytes_read_params += p.bytes_read_params;
      t.bytes_written += p.bytes_written;
      t.redundant_elements += p.redundant_elements;
      t.op_count += p.op_count;
      t.wall_ms += p.wall_ms;
    }
    return t;
  }

  // Equality of every counter; wall times are ignored.
  bool same_counters(const TrafficReport& o) const {
    if (parts.size() != o.parts.size()) return false;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (!parts[i].same_counters(o.parts[i])) return false;
    }
    return true;
  }
};

inline TrafficEntry to_entry(std::string label, const CostTally& t, std::size_t element_size) {
  const auto es = static_cast<std::uint64_t>(element_size);
  return {std::move(label), t.read_elements * es, t.param_elements * es, t.written_elements * es,
          t.redundant_elements, t.op_count, 0.0};
}

inline std::string layer_label(const NetworkGraph& g, std::size_t node) {
  return "node " + std::to_string(node) + " " + std::string(kind_name(g.layers[node].kind));
}

inline std::string sequence_label(std::size_t stack, std::size_t seq) {
  return "stack " + std::to_string(stack) + " seq " + std::to_string(seq);
}

// Breadth-first charge for one layer: full input read, full output write,
// all parameters once.
inline CostTally layer_cost(const NetworkGraph& g, std::size_t node) {
  const LayerSpec& layer = g.layers[node];
  const Shape4& in = g.input_of(node);
  const Shape4& out = g.shapes[node];
  CostTally t;
  t.read_elements = in.elements();
  t.written_elements = out.elements();
  t.param_elements = layer_param_elements(layer);
  t.op_count = out.elements() * layer_ops_per_output(layer, in);
  return t;
}

inline TrafficReport model_breadth_first(const NetworkGraph& g, std::size_t element_size = 4) {
  TrafficReport r;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    r.parts.push_back(to_entry(layer_label(g, i), layer_cost(g, i), element_size));
  }
  return r;
}

inline TrafficReport model_depth_first(const ExecutionPlan& p) {
  const NetworkGraph& g = *p.graph;
  const std::size_t es = p.device.element_size;
  TrafficReport r;
  for (const auto& item : p.items) {
    if (!item.is_stack) {
      r.parts.push_back(to_entry(layer_label(g, item.index), layer_cost(g, item.index), es));
      continue;
    }
    const PlannedStack& ps = p.stacks[item.index];
    const StackTemplate& t = p.template_of(ps);
    const std::span<const Step> steps(t.steps);
    for (std::size_t q = 0; q < t.sequences.size(); ++q) {
      const Sequence& seq = t.sequences[q];
      const auto sub = steps.subspan(seq.first_step, seq.step_count());
      const CostTally cost = seq.streamed
                                 ? breadth_first_cost(ps.stack, sub.front().first_op, sub.back().end_op)
                                 : sequence_cost(ps.stack, sub, seq.tile);
      r.parts.push_back(to_entry(sequence_label(item.index, q), cost, es));
    }
  }
  return r;
}

// Analytical report without executing anything: breadth-first when no plan is
// given, otherwise the plan's depth-first schedule.
inline TrafficReport model_traffic(const NetworkGraph& g, const ExecutionPlan* p = nullptr) {
  if (p == nullptr) return model_breadth_first(g.validated() ? g : validate(g));
  return model_depth_first(*p);
}

}  // namespace slugplan
