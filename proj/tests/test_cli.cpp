#include <gtest/gtest.h>
#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace {

namespace fs = std::filesystem;

const fs::path kSamples = SLUGPLAN_SAMPLES_DIR;

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(SLUGPLAN_CLI) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) r.out += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string sample(const char* name) { return (kSamples / name).string(); }

fs::path temp(const char* name) {
  const auto dir = fs::temp_directory_path() / "slugplan_cli_test";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string line_with(const std::string& text, const std::string& prefix) {
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind(prefix, 0) == 0) return line;
  }
  return {};
}

}  // namespace

TEST(Cli, ValidatePrintsShapeRows) {
  const Result r = run("validate " + sample("blocks3.json"));
  ASSERT_EQ(r.code, 0) << r.out;
  int rows = 0;
  std::istringstream is(r.out);
  std::string line;
  while (std::getline(is, line)) rows += line.find("(1,3,32,32)") != std::string::npos && line.rfind("input", 0) != 0;
  EXPECT_EQ(rows, 9);
}

TEST(Cli, ValidateErrors) {
  const Result bad = run("validate " + sample("bad_batchnorm.json"));
  EXPECT_EQ(bad.code, 3);
  EXPECT_NE(bad.out.find("node 1"), std::string::npos) << bad.out;
  const Result missing = run("validate " + sample("missing.json"));
  EXPECT_EQ(missing.code, 3);
  EXPECT_NE(missing.out.find("I/O error"), std::string::npos) << missing.out;
}

TEST(Cli, PlanStepCap) {
  const Result a = run("plan " + sample("blocks16.json") + " --device " + sample("device.json") + " --max-steps 5");
  ASSERT_EQ(a.code, 0) << a.out;
  EXPECT_NE(a.out.find("1 stacks, 4 sequences"), std::string::npos) << a.out;
  const Result b = run("plan " + sample("blocks16.json") + " --device " + sample("device_5step.json"));
  EXPECT_NE(b.out.find("1 stacks, 4 sequences"), std::string::npos) << b.out;
}

TEST(Cli, PlanElementwiseAndHugeBudget) {
  const Result a = run("plan " + sample("elementwise20.json") + " --device " + sample("device.json"));
  ASSERT_EQ(a.code, 0) << a.out;
  EXPECT_NE(a.out.find("1 stacks, 1 sequences"), std::string::npos) << a.out;
  EXPECT_NE(a.out.find("step 0:"), std::string::npos);
  EXPECT_EQ(a.out.find("step 1:"), std::string::npos);
  for (int d : {10, 40}) {
    const Result b = run("plan builtin:blocks:" + std::to_string(d) + " --shape 1,2,64,64 --device " +
                         sample("device_huge.json"));
    EXPECT_NE(b.out.find("1 stacks, 1 sequences"), std::string::npos) << b.out;
  }
}

TEST(Cli, PlanJson) {
  const Result r = run("plan " + sample("mixed.json") + " --device " + sample("device.json") + " --json");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["stacks"], 2);
  EXPECT_EQ(j["schedule"].size(), 5u);
}

TEST(Cli, RunModesProduceIdenticalFiles) {
  const auto bf = temp("bf.bstn"), df = temp("df.bstn");
  const std::string common = "run " + sample("blocks8.json") + " --input prng:7x2,4,32,32 --device " + sample("device.json");
  const Result a = run(common + " --mode bf --out " + bf.string());
  const Result b = run(common + " --mode df --out " + df.string());
  ASSERT_EQ(a.code, 0) << a.out;
  ASSERT_EQ(b.code, 0) << b.out;
  EXPECT_EQ(slurp(bf), slurp(df));
  // df moves fewer bytes.
  const auto total = [](const std::string& out) {
    std::istringstream is(line_with(out, "total"));
    std::string label;
    unsigned long long rd = 0, rp = 0, wr = 0;
    is >> label >> rd >> rp >> wr;
    return rd + rp + wr;
  };
  EXPECT_LT(total(b.out), total(a.out));
}

TEST(Cli, RunChecksumDeterministic) {
  const std::string cmd = "run " + sample("blocks3.json") + " --input prng:7x1,3,32,32 --mode df";
  const Result a = run(cmd), b = run(cmd);
  ASSERT_EQ(a.code, 0) << a.out;
  EXPECT_EQ(line_with(a.out, "mode"), line_with(b.out, "mode"));
  EXPECT_NE(line_with(a.out, "mode").find("checksum"), std::string::npos);
}

TEST(Cli, RunReadsTensorFile) {
  const auto in = temp("in.bstn"), out = temp("out.bstn");
  ASSERT_EQ(run("run " + sample("blocks3.json") + " --input prng:3x1,3,32,32 --mode bf --out " + in.string()).code, 0);
  const Result r = run("run " + sample("blocks3.json") + " --input " + in.string() + " --mode df --out " + out.string());
  EXPECT_EQ(r.code, 0) << r.out;
  const Result bad = run("run " + sample("blocks3.json") + " --input prng:3x1,2,32,32 --mode df");
  EXPECT_EQ(bad.code, 3) << bad.out;
}

TEST(Cli, Compare) {
  const Result r = run("compare " + sample("mixed.json") + " --input prng:1x2,3,16,16 --device " + sample("device.json") +
                       " --workers 4");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("bit_identical yes"), std::string::npos);
  EXPECT_NE(r.out.find("max_abs_diff 0"), std::string::npos);
  EXPECT_NE(r.out.find("counted_equals_modeled yes"), std::string::npos);
}

TEST(Cli, BenchBuiltinBlocksCsv) {
  const auto csv = temp("bench.csv");
  const Result r = run("bench builtin:blocks --depth 1..3 --reps 1 --shape 1,2,32,32 --csv " + csv.string());
  ASSERT_EQ(r.code, 0) << r.out;
  std::istringstream is(slurp(csv));
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "network,batch,mode,min_ms,bytes_read,bytes_written,redundant_elements,speedup");
  int rows = 0;
  while (std::getline(is, line)) rows += !line.empty();
  EXPECT_EQ(rows, 9);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("run " + sample("blocks3.json") + " --mode df").code, 2);
  EXPECT_EQ(run("run " + sample("blocks3.json") + " --input prng:1x1,3,32,32 --mode xx").code, 2);
  EXPECT_EQ(run("run " + sample("blocks3.json") + " --input prng:oops --mode df").code, 2);
  EXPECT_EQ(run("bench builtin:blocks --depth 3..1").code, 2);

  const auto unknown = temp("dev_unknown.json");
  std::ofstream(unknown) << R"({"lanes": 128, "cache": 1})";
  EXPECT_EQ(run("plan " + sample("blocks3.json") + " --device " + unknown.string()).code, 3);

  const auto tiny = temp("dev_tiny.json");
  std::ofstream(tiny) << R"({"lanes": 128, "scratch_bytes": 16, "element_size": 4, "worker_count": 1})";
  const Result p = run("plan " + sample("blocks3.json") + " --device " + tiny.string());
  EXPECT_EQ(p.code, 4) << p.out;
  EXPECT_NE(p.out.find("planning error"), std::string::npos);
}
