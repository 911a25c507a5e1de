// slugplan: validate, plan, run, compare and benchmark fused layer stacks.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "slugplan/slugplan.hpp"

namespace {

using namespace slugplan;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitParse = 3;
constexpr int kExitPlanning = 4;
constexpr int kExitMismatch = 5;

class UsageError : public Error {
 public:
  using Error::Error;
};

struct DeviceConfig {
  DeviceSpec device;
  PlanPolicy policy;
};

DeviceConfig load_device(const std::string& path) {
  DeviceConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open device file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("device file: malformed JSON: " + std::string(e.what()));
  }
  if (!j.is_object()) throw ParseError("device file: top level must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!value.is_number_integer() || value.get<std::int64_t>() < 0) {
      throw ParseError("device file: '" + key + "' must be a non-negative integer");
    }
    const auto v = value.get<std::size_t>();
    if (key == "lanes") cfg.device.lanes = v;
    else if (key == "scratch_bytes") cfg.device.scratch_bytes = v;
    else if (key == "element_size") cfg.device.element_size = v;
    else if (key == "worker_count") cfg.device.worker_count = v;
    else if (key == "max_steps_per_sequence") cfg.policy.max_steps_per_sequence = v;
    else if (key == "channels_per_tile") cfg.policy.channels_per_tile = v;
    else throw ParseError("device file: unknown field '" + key + "'");
  }
  cfg.device.check();
  cfg.policy.check();
  return cfg;
}

std::vector<std::size_t> parse_list(const std::string& text, char sep) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, sep)) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(part, &used);
      if (used != part.size()) throw std::invalid_argument(part);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("expected a number, got '" + part + "' in '" + text + "'");
    }
  }
  return out;
}

Shape4 parse_shape(const std::string& text) {
  const auto v = parse_list(text, ',');
  if (v.size() != 4) throw UsageError("shape must be N,C,H,W, got '" + text + "'");
  const Shape4 s{v[0], v[1], v[2], v[3]};
  if (!s.valid()) throw UsageError("shape dims must be >= 1, got '" + text + "'");
  return s;
}

constexpr std::string_view kBuiltinBlocks = "builtin:blocks";

// A network path, or builtin:blocks:DEPTH.
NetworkGraph load_net(const std::string& spec, const Shape4& builtin_shape, std::uint64_t seed) {
  if (spec.starts_with(kBuiltinBlocks)) {
    const std::string rest = spec.substr(kBuiltinBlocks.size());
    if (rest.size() < 2 || rest[0] != ':') {
      throw UsageError("builtin network needs a depth: builtin:blocks:DEPTH");
    }
    const auto depth = parse_list(rest.substr(1), ',');
    if (depth.size() != 1 || depth[0] < 1) throw UsageError("bad builtin depth in '" + spec + "'");
    return validate(blocks_network(depth[0], builtin_shape, seed));
  }
  return validate(load_network(spec));
}

// t.bstn or prng:SEEDxN,C,H,W
Tensor load_input(const std::string& spec) {
  if (spec.starts_with("prng:")) {
    const std::string rest = spec.substr(5);
    const auto x = rest.find('x');
    if (x == std::string::npos) throw UsageError("input spec must be prng:SEEDxN,C,H,W");
    const auto seed = parse_list(rest.substr(0, x), ',');
    if (seed.size() != 1) throw UsageError("bad seed in '" + spec + "'");
    return prng_fill(seed[0], parse_shape(rest.substr(x + 1)));
  }
  return load_tensor(spec);
}

std::uint64_t checksum(const Tensor& t) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : encode_tensor(t)) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

void print_traffic(const TrafficReport& r) {
  std::printf("%-22s %14s %14s %14s %12s %14s %10s\n", "part", "read_data", "read_params",
              "written", "redundant", "ops", "ms");
  auto row = [](const TrafficEntry& e) {
    std::printf("%-22s %14llu %14llu %14llu %12llu %14llu %10.3f\n", e.label.c_str(),
                static_cast<unsigned long long>(e.bytes_read_data),
                static_cast<unsigned long long>(e.bytes_read_params),
                static_cast<unsigned long long>(e.bytes_written),
                static_cast<unsigned long long>(e.redundant_elements),
                static_cast<unsigned long long>(e.op_count), e.wall_ms);
  };
  for (const auto& e : r.parts) row(e);
  row(r.total());
}

struct CommonOpts {
  std::string net;
  std::string device_path;
  std::optional<std::size_t> max_steps;
  std::optional<std::size_t> channels_per_tile;
  std::optional<std::size_t> workers;
  bool no_grow = false;
  std::string shape = "1,8,64,64";
  std::uint64_t seed = 0;
};

DeviceConfig resolve_device(const CommonOpts& o) {
  DeviceConfig cfg = load_device(o.device_path);
  if (o.max_steps) cfg.policy.max_steps_per_sequence = *o.max_steps;
  if (o.channels_per_tile) cfg.policy.channels_per_tile = *o.channels_per_tile;
  if (o.workers) cfg.device.worker_count = *o.workers;
  if (o.no_grow) cfg.policy.grow_tile = false;
  cfg.device.check();
  cfg.policy.check();
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& o, bool with_policy) {
  cmd->add_option("network", o.net, "network JSON file or builtin:blocks:DEPTH")->required();
  cmd->add_option("--device", o.device_path, "device JSON file");
  cmd->add_option("--shape", o.shape, "input shape N,C,H,W for builtin networks");
  cmd->add_option("--seed", o.seed, "seed for builtin network parameters");
  cmd->add_option("--workers", o.workers, "parallel tile workers");
  if (with_policy) {
    cmd->add_option("--max-steps", o.max_steps, "max steps per sequence (0 = unrestricted)");
    cmd->add_option("--channels-per-tile", o.channels_per_tile, "channels per tile");
    cmd->add_flag("--no-grow", o.no_grow, "keep tiles at their base extent");
  }
}

int cmd_validate(const CommonOpts& o) {
  const NetworkGraph g = load_net(o.net, parse_shape(o.shape), o.seed);
  std::printf("input %s\n", to_string(g.input_shape).c_str());
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    std::printf("%4zu  %-10s %-12s %s\n", i, std::string(kind_name(g.layers[i].kind)).c_str(),
                std::string(class_name(classify(g.layers[i].kind))).c_str(),
                to_string(g.shapes[i]).c_str());
  }
  return kExitOk;
}

int cmd_plan(const CommonOpts& o, bool as_json) {
  const DeviceConfig cfg = resolve_device(o);
  const NetworkGraph g = load_net(o.net, parse_shape(o.shape), o.seed);
  const ExecutionPlan p = plan(g, cfg.device, cfg.policy);
  if (as_json) {
    std::cout << plan_report_json(p).dump(2) << "\n";
  } else {
    std::cout << plan_report_text(p);
  }
  return kExitOk;
}

int cmd_run(const CommonOpts& o, const std::string& input, const std::string& mode,
            const std::string& out_path) {
  if (mode != "bf" && mode != "df") throw UsageError("--mode must be bf or df");
  const DeviceConfig cfg = resolve_device(o);
  const NetworkGraph g = load_net(o.net, parse_shape(o.shape), o.seed);
  const Tensor x = load_input(input);
  RunResult r;
  if (mode == "bf") {
    r = run_breadth_first(g, x, cfg.device.worker_count, cfg.device.element_size);
  } else {
    r = run_depth_first(plan(g, cfg.device, cfg.policy), x);
  }
  if (!out_path.empty()) save_tensor(r.output, out_path);
  std::printf("mode %s output %s checksum %016llx\n", mode.c_str(),
              to_string(r.output.shape()).c_str(),
              static_cast<unsigned long long>(checksum(r.output)));
  print_traffic(r.traffic);
  return kExitOk;
}

int cmd_compare(const CommonOpts& o, const std::string& input) {
  const DeviceConfig cfg = resolve_device(o);
  const NetworkGraph g = load_net(o.net, parse_shape(o.shape), o.seed);
  const Tensor x = load_input(input);
  const ExecutionPlan p = plan(g, cfg.device, cfg.policy);
  const RunResult bf = run_breadth_first(g, x, cfg.device.worker_count, cfg.device.element_size);
  const RunResult df = run_depth_first(p, x);
  double max_diff = 0.0;
  const auto a = bf.output.data(), b = df.output.data();
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
    const double d = std::fabs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    if (d > max_diff || std::isnan(d)) max_diff = d;
  }
  const bool equal = bf.output.bit_equal(df.output);
  const auto tb = bf.traffic.total(), td = df.traffic.total();
  const bool model_ok = model_breadth_first(g, cfg.device.element_size).same_counters(bf.traffic) &&
                        model_traffic(*p.graph, &p).same_counters(df.traffic);
  std::printf("bit_identical %s\n", equal ? "yes" : "no");
  std::printf("max_abs_diff %.9g\n", max_diff);
  std::printf("bf bytes %llu (data %llu)  time %.3f ms\n", static_cast<unsigned long long>(tb.bytes_total()),
              static_cast<unsigned long long>(tb.data_bytes()), tb.wall_ms);
  std::printf("df bytes %llu (data %llu)  time %.3f ms  sequences %zu\n",
              static_cast<unsigned long long>(td.bytes_total()),
              static_cast<unsigned long long>(td.data_bytes()), td.wall_ms, p.sequence_count());
  std::printf("traffic_ratio bf/df %.4f\n",
              td.bytes_total() ? static_cast<double>(tb.bytes_total()) / static_cast<double>(td.bytes_total()) : 0.0);
  std::printf("redundant_elements %llu\n", static_cast<unsigned long long>(td.redundant_elements));
  std::printf("counted_equals_modeled %s\n", model_ok ? "yes" : "no");
  return equal && model_ok ? kExitOk : kExitMismatch;
}

int cmd_bench(const CommonOpts& o, const std::string& depth, const std::string& batches,
              std::size_t reps, const std::string& csv_path) {
  const DeviceConfig cfg = resolve_device(o);
  BenchOptions opt;
  opt.batches = parse_list(batches, ',');
  opt.repetitions = reps;
  opt.workers = cfg.device.worker_count;
  opt.seed = o.seed;
  if (opt.batches.empty()) throw UsageError("--batch needs at least one size");
  std::vector<BenchRow> rows;
  if (o.net == kBuiltinBlocks) {
    std::size_t lo = 1, hi = 1;
    const auto dots = depth.find("..");
    if (dots == std::string::npos) {
      lo = hi = parse_list(depth, ',').at(0);
    } else {
      lo = parse_list(depth.substr(0, dots), ',').at(0);
      hi = parse_list(depth.substr(dots + 2), ',').at(0);
    }
    if (lo < 1 || hi < lo) throw UsageError("--depth must be a..b with 1 <= a <= b");
    const Shape4 shape = parse_shape(o.shape);
    for (std::size_t d = lo; d <= hi; ++d) {
      const NetworkGraph g = blocks_network(d, shape, o.seed);
      auto part = bench("blocks-" + std::to_string(d), g, cfg.device, block_policies(cfg.policy), opt);
      rows.insert(rows.end(), part.begin(), part.end());
    }
  } else {
    const NetworkGraph g = load_net(o.net, parse_shape(o.shape), o.seed);
    const std::string name = std::filesystem::path(o.net).stem().string();
    rows = bench(name, g, cfg.device, {{"df", cfg.policy}}, opt);
  }
  std::cout << bench_table(rows);
  if (!csv_path.empty()) {
    std::ofstream out(csv_path);
    if (!out) throw IoError("cannot write '" + csv_path + "'");
    out << bench_csv(rows);
  }
  for (const auto& r : rows) {
    if (!r.outputs_equal) return kExitMismatch;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"slugplan: depth-first layer fusion planner and executor"};
  app.require_subcommand(1);

  CommonOpts vo, po, ro, co, bo;
  bool as_json = false;
  std::string run_input, run_mode = "df", run_out, cmp_input;
  std::string depth = "1", batches = "1", csv_path;
  std::size_t reps = 5;

  auto* validate_cmd = app.add_subcommand("validate", "parse, validate and print per-node shapes");
  add_common(validate_cmd, vo, false);

  auto* plan_cmd = app.add_subcommand("plan", "print the execution plan");
  add_common(plan_cmd, po, true);
  plan_cmd->add_flag("--json", as_json, "emit JSON");

  auto* run_cmd = app.add_subcommand("run", "execute the network");
  add_common(run_cmd, ro, true);
  run_cmd->add_option("--input", run_input, "t.bstn or prng:SEEDxN,C,H,W")->required();
  run_cmd->add_option("--mode", run_mode, "bf or df")->check(CLI::IsMember({"bf", "df"}));
  run_cmd->add_option("--out", run_out, "output tensor file (BSTN)");

  auto* cmp_cmd = app.add_subcommand("compare", "run both modes and diff them");
  add_common(cmp_cmd, co, true);
  cmp_cmd->add_option("--input", cmp_input, "t.bstn or prng:SEEDxN,C,H,W")->required();

  auto* bench_cmd = app.add_subcommand("bench", "time breadth-first vs depth-first");
  add_common(bench_cmd, bo, true);
  bench_cmd->add_option("--depth", depth, "block depths a..b for builtin:blocks");
  bench_cmd->add_option("--batch", batches, "comma-separated batch sizes");
  bench_cmd->add_option("--reps", reps, "repetitions per configuration (minimum is kept)");
  bench_cmd->add_option("--csv", csv_path, "write the table as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (validate_cmd->parsed()) return cmd_validate(vo);
    if (plan_cmd->parsed()) return cmd_plan(po, as_json);
    if (run_cmd->parsed()) return cmd_run(ro, run_input, run_mode, run_out);
    if (cmp_cmd->parsed()) return cmd_compare(co, cmp_input);
    if (bench_cmd->parsed()) return cmd_bench(bo, depth, batches, reps, csv_path);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const PlanningError& e) {
    std::fprintf(stderr, "planning error: %s\n", e.what());
    return kExitPlanning;
  } catch (const IoError& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kExitParse;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitParse;
  }
  return kExitUsage;
}
