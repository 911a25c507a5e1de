#pragma once

// Timing harness: runs both executors several times per configuration and
// keeps the minimum wall time of each.

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "slugplan/executor.hpp"
#include "slugplan/graph.hpp"
#include "slugplan/planner.hpp"

namespace slugplan {

struct NamedPolicy {
  std::string name;
  PlanPolicy policy;
};

// Only 1 step per sequence, at most 5, and unrestricted.
inline std::vector<NamedPolicy> block_policies(const PlanPolicy& base = {}) {
  PlanPolicy one = base, five = base, unrestricted = base;
  one.max_steps_per_sequence = 1;
  five.max_steps_per_sequence = 5;
  unrestricted.max_steps_per_sequence = 0;
  return {{"df-1step", one}, {"df-5step", five}, {"df-unrestricted", unrestricted}};
}

struct BenchRow {
  std::string network;
  std::size_t batch = 1;
  std::string mode;
  double min_ms = 0.0;
  std::uint64_t bytes_read = 0;
  std::uint64_t bytes_written = 0;
  std::uint64_t redundant_elements = 0;
  double speedup = 0.0;
  // Not part of the CSV.
  double bf_min_ms = 0.0;
  std::size_t sequences = 0;
  bool outputs_equal = true;
};

struct BenchOptions {
  std::vector<std::size_t> batches{1};
  std::size_t repetitions = 5;
  std::size_t workers = 1;
  std::uint64_t seed = 0;
};

inline NetworkGraph with_batch(NetworkGraph g, std::size_t batch) {
  g.input_shape.n = batch;
  g.shapes.clear();
  g.flatten_points.clear();
  return validate(std::move(g));
}

template <typename Fn>
double min_time_ms(std::size_t reps, Fn&& fn) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(reps, 1); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

// One row per (batch, policy): the depth-first run under that policy,
// compared against the breadth-first reference for the same batch.
inline std::vector<BenchRow> bench(const std::string& name, const NetworkGraph& g, const DeviceSpec& dev,
                                   const std::vector<NamedPolicy>& policies, const BenchOptions& opt) {
  std::vector<BenchRow> rows;
  for (std::size_t batch : opt.batches) {
    const NetworkGraph gb = with_batch(g, batch);
    const Tensor x = prng_fill(opt.seed, gb.input_shape);
    RunResult bf;
    const double bf_ms = min_time_ms(opt.repetitions, [&] { bf = run_breadth_first(gb, x, opt.workers, dev.element_size); });
    for (const auto& np : policies) {
      const ExecutionPlan p = plan(gb, dev, np.policy);
      RunResult df;
      const double df_ms = min_time_ms(opt.repetitions, [&] { df = run_depth_first(p, x, opt.workers); });
      const TrafficEntry t = df.traffic.total();
      BenchRow row;
      row.network = name;
      row.batch = batch;
      row.mode = np.name;
      row.min_ms = df_ms;
      row.bytes_read = t.bytes_read();
      row.bytes_written = t.bytes_written;
      row.redundant_elements = t.redundant_elements;
      row.speedup = df_ms > 0.0 ? bf_ms / df_ms : 0.0;
      row.bf_min_ms = bf_ms;
      row.sequences = p.sequence_count();
      row.outputs_equal = df.output.bit_equal(bf.output);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline const char* kBenchCsvHeader =
    "network,batch,mode,min_ms,bytes_read,bytes_written,redundant_elements,speedup";

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << kBenchCsvHeader << "\n";
  os << std::setprecision(17);
  for (const auto& r : rows) {
    os << r.network << "," << r.batch << "," << r.mode << "," << r.min_ms << "," << r.bytes_read << ","
       << r.bytes_written << "," << r.redundant_elements << "," << r.speedup << "\n";
  }
  return os.str();
}

inline std::vector<BenchRow> parse_bench_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kBenchCsvHeader) {
    throw ParseError("bench csv: missing or unexpected header");
  }
  std::vector<BenchRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 8) throw ParseError("bench csv: expected 8 columns in '" + line + "'");
    BenchRow r;
    try {
      r.network = f[0];
      r.batch = std::stoull(f[1]);
      r.mode = f[2];
      r.min_ms = std::stod(f[3]);
      r.bytes_read = std::stoull(f[4]);
      r.bytes_written = std::stoull(f[5]);
      r.redundant_elements = std::stoull(f[6]);
      r.speedup = std::stod(f[7]);
    } catch (const std::exception&) {
      throw ParseError("bench csv: malformed row '" + line + "'");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::string bench_table(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(18) << "network" << std::right << std::setw(6) << "batch" << "  "
     << std::left << std::setw(16) << "mode" << std::right << std::setw(5) << "seqs" << std::setw(11)
     << "bf_ms" << std::setw(11) << "min_ms" << std::setw(14) << "bytes_read" << std::setw(14)
     << "bytes_written" << std::setw(12) << "redundant" << std::setw(9) << "speedup" << "\n";
  os << std::fixed;
  for (const auto& r : rows) {
    os << std::left << std::setw(18) << r.network << std::right << std::setw(6) << r.batch << "  "
       << std::left << std::setw(16) << r.mode << std::right << std::setw(5) << r.sequences
       << std::setw(11) << std::setprecision(3) << r.bf_min_ms << std::setw(11) << r.min_ms
       << std::setw(14) << r.bytes_read << std::setw(14) << r.bytes_written << std::setw(12)
       << r.redundant_elements << std::setw(9) << std::setprecision(2) << r.speedup
       << (r.outputs_equal ? "" : "  MISMATCH") << "\n";
  }
  return os.str();
}

}  // namespace slugplan
