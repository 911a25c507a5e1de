#pragma once

#include <cstdio>
#include <sstream>
#include <string>

#include "json.hpp"
#include "slugplan/planner.hpp"

namespace slugplan {

namespace detail {

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string op_text(const StackOp& op) {
  std::string s(kind_name(op.kind));
  if (classify(op.kind) == OpClass::kPooling) s += "(" + to_string(op.window) + ")";
  return s;
}

inline std::string max_steps_text(const PlanPolicy& p) {
  return p.max_steps_per_sequence == 0 ? "unlimited" : std::to_string(p.max_steps_per_sequence);
}

}  // namespace detail

// Deterministic human-readable plan listing.
inline std::string plan_report_text(const ExecutionPlan& p) {
  const NetworkGraph& g = *p.graph;
  std::ostringstream os;
  os << "plan: input " << to_string(g.input_shape) << " -> output " << to_string(g.output_shape())
     << ", " << g.layers.size() << " layers, " << p.stacks.size() << " stacks, "
     << p.sequence_count() << " sequences\n";
  os << "device: lanes=" << p.device.lanes << " scratch_bytes=" << p.device.scratch_bytes
     << " element_size=" << p.device.element_size << " worker_count=" << p.device.worker_count << "\n";
  os << "policy: max_steps_per_sequence=" << detail::max_steps_text(p.policy)
     << " channels_per_tile=" << p.policy.channels_per_tile
     << " grow_tile=" << (p.policy.grow_tile ? "yes" : "no") << "\n";
  for (const auto& item : p.items) {
    if (!item.is_stack) {
      os << "opaque node " << item.index << " " << kind_name(g.layers[item.index].kind) << " -> "
         << to_string(g.shapes[item.index]) << " (breadth-first)\n";
      continue;
    }
    const PlannedStack& ps = p.stacks[item.index];
    const StackTemplate& t = p.template_of(ps);
    os << "stack " << item.index << ": nodes " << ps.stack.first_node << ".." << ps.stack.end_node - 1
       << " (" << ps.stack.ops.size() << " layers) " << to_string(ps.stack.input_shape()) << " -> "
       << to_string(ps.stack.output_shape()) << ", template " << ps.template_id << " hash "
       << detail::hex64(t.hash) << "\n";
    for (std::size_t k = 0; k < t.steps.size(); ++k) {
      const Step& st = t.steps[k];
      os << "  step " << k << ":";
      for (std::size_t o = st.first_op; o < st.end_op; ++o) os << " " << detail::op_text(ps.stack.ops[o]);
      os << "\n";
    }
    for (std::size_t q = 0; q < t.sequences.size(); ++q) {
      const Sequence& s = t.sequences[q];
      const auto headroom = static_cast<std::int64_t>(p.device.scratch_bytes) - s.consumption.bytes;
      os << "  sequence " << q << ": steps " << s.first_step << ".." << s.end_step - 1 << " tile "
         << to_string(s.tile) << " channels_per_tile=" << s.tile.channels
         << " outputs_per_lane=" << s.outputs_per_lane << " consumption "
         << s.consumption.elements << " elements / " << s.consumption.bytes << " bytes, headroom "
         << headroom << " bytes" << (s.streamed ? ", streamed" : "") << "\n";
    }
  }
  return os.str();
}

// Same content as plan_report_text() as a JSON document.
inline nlohmann::json plan_report_json(const ExecutionPlan& p) {
  using nlohmann::json;
  const NetworkGraph& g = *p.graph;
  const auto shape = [](const Shape4& s) { return json::array({s.n, s.c, s.h, s.w}); };
  json doc;
  doc["input_shape"] = shape(g.input_shape);
  doc["output_shape"] = shape(g.output_shape());
  doc["device"] = {{"lanes", p.device.lanes},
                   {"scratch_bytes", p.device.scratch_bytes},
                   {"element_size", p.device.element_size},
                   {"worker_count", p.device.worker_count}};
  doc["policy"] = {{"max_steps_per_sequence", p.policy.max_steps_per_sequence},
                   {"channels_per_tile", p.policy.channels_per_tile},
                   {"grow_tile", p.policy.grow_tile}};
  json schedule = json::array();
  for (const auto& item : p.items) {
    if (!item.is_stack) {
      schedule.push_back({{"type", "opaque"},
                          {"node", item.index},
                          {"kind", std::string(kind_name(g.layers[item.index].kind))},
                          {"output_shape", shape(g.shapes[item.index])}});
      continue;
    }
    const PlannedStack& ps = p.stacks[item.index];
    const StackTemplate& t = p.template_of(ps);
    json steps = json::array();
    for (const auto& st : t.steps) {
      json ops = json::array();
      for (std::size_t o = st.first_op; o < st.end_op; ++o) ops.push_back(detail::op_text(ps.stack.ops[o]));
      steps.push_back({{"ops", ops}, {"first_node", ps.stack.ops[st.first_op].node}});
    }
    json seqs = json::array();
    for (const auto& s : t.sequences) {
      seqs.push_back({{"first_step", s.first_step},
                      {"last_step", s.end_step - 1},
                      {"tile", {{"width", s.tile.width}, {"height", s.tile.height}, {"channels", s.tile.channels}}},
                      {"outputs_per_lane", s.outputs_per_lane},
                      {"consumption_elements", s.consumption.elements},
                      {"consumption_bytes", s.consumption.bytes},
                      {"boundary_elements", s.consumption.boundary_elements},
                      {"headroom_bytes", static_cast<std::int64_t>(p.device.scratch_bytes) - s.consumption.bytes},
                      {"streamed", s.streamed}});
    }
    schedule.push_back({{"type", "stack"},
                        {"stack", item.index},
                        {"first_node", ps.stack.first_node},
                        {"last_node", ps.stack.end_node - 1},
                        {"template", ps.template_id},
                        {"hash", detail::hex64(t.hash)},
                        {"steps", steps},
                        {"sequences", seqs}});
  }
  doc["schedule"] = schedule;
  doc["stacks"] = p.stacks.size();
  doc["sequences"] = p.sequence_count();
  return doc;
}

}  // namespace slugplan
