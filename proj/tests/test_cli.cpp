#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

#ifndef BOOSTVI_CLI_PATH
#error "BOOSTVI_CLI_PATH must name the boostvi executable"
#endif

namespace {

struct Result {
  int code = -1;
  std::string out;
};

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("boostvi_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Result run(const std::string& args) {
  const fs::path log = fs::temp_directory_path() / "boostvi_cli_last.log";
  const std::string cmd = std::string("\"") + BOOSTVI_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json trace_without_clock(const fs::path& dir) {
  json t = json::parse(slurp(dir / "trace.json"));
  for (auto& r : t["runs"]) {
    for (auto& rec : r["records"]) rec.erase("wallclock");
  }
  return t;
}

const std::string kQuick = " --iters 3 --lmo-steps 600 --gap-samples 512";

}  // namespace

TEST(Cli, RunWritesArtifacts) {
  const auto dir = scratch("run");
  const auto r = run("run --model bimodal --variant fixed --seed 7" + kQuick + " --out " + dir.string());
  ASSERT_EQ(r.code, 0) << r.out;
  for (const char* f : {"config.json", "trace.json", "summary.json", "density.csv"}) EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_NE(r.out.find("seed=7 t=3"), std::string::npos) << r.out;
  const json cfg = json::parse(slurp(dir / "config.json"));
  EXPECT_EQ(cfg["iters"], 3);
  EXPECT_EQ(cfg["variant"], "fixed");
}

TEST(Cli, RunIsDeterministic) {
  const auto a = scratch("det_a");
  const auto b = scratch("det_b");
  const std::string args = "run --model bimodal --variant linesearch --seed 3" + kQuick;
  ASSERT_EQ(run(args + " --out " + a.string()).code, 0);
  ASSERT_EQ(run(args + " --out " + b.string()).code, 0);
  EXPECT_EQ(trace_without_clock(a), trace_without_clock(b));
  EXPECT_EQ(slurp(a / "density.csv"), slurp(b / "density.csv"));
  EXPECT_EQ(slurp(a / "summary.json"), slurp(b / "summary.json"));
}

TEST(Cli, ConfigFileAndOverride) {
  const auto dir = scratch("config");
  std::ofstream(dir / "c.json") << R"({"model": "bimodal", "iters": 5, "lmo-steps": 600, "gap-samples": 256})";
  const auto r = run("run --config " + (dir / "c.json").string() + " --iters 2 --out " + (dir / "out").string());
  ASSERT_EQ(r.code, 0) << r.out;
  const json cfg = json::parse(slurp(dir / "out" / "config.json"));
  EXPECT_EQ(cfg["iters"], 2);
  EXPECT_EQ(cfg["lmo-steps"], 600);
}

TEST(Cli, ConfigErrors) {
  const auto dir = scratch("errors");
  auto r = run("run --variant bogus --out " + dir.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("'variant'"), std::string::npos) << r.out;
  r = run("run --delta 1.5 --out " + dir.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("'delta'"), std::string::npos) << r.out;
  std::ofstream(dir / "bad.json") << R"({"iterations": 3})";
  r = run("run --config " + (dir / "bad.json").string() + " --out " + dir.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("'iterations'"), std::string::npos) << r.out;
  EXPECT_EQ(run("run --model bimodal").code, 1);
  EXPECT_EQ(run("run --no-such-flag 1").code, 1);
  EXPECT_EQ(run("").code, 1);
}

TEST(Cli, DataErrorIsRuntimeFailure) {
  const auto dir = scratch("data");
  std::ofstream(dir / "d.csv") << "x1,y\n0.5,1\n,0\n";
  const auto r = run("run --model logistic --data " + (dir / "d.csv").string() + " --iters 1 --out " +
                     (dir / "out").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("row 2"), std::string::npos) << r.out;
}

TEST(Cli, ProbeSuitePasses) {
  const auto r = run("probe");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("all probes passed"), std::string::npos);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos) << r.out;
}

TEST(Cli, ProbeCurvatureAtGamma) {
  const auto r = run("probe --probe curvature --gamma 1");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("s=N(1,1) q=N(0,1)"), std::string::npos) << r.out;
}

TEST(Cli, ProbeZeroScaleFloorFails) {
  const auto r = run("probe --probe entropy --scale-floor 0");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.out.find("degenerate"), std::string::npos) << r.out;
  EXPECT_EQ(run("probe --probe nonsense").code, 1);
}

TEST(Cli, PlotData) {
  const auto dir = scratch("plot");
  ASSERT_EQ(run("run --model bimodal --variant fullycorrective" + kQuick + " --out " + (dir / "fc").string()).code, 0);
  const auto r = run("plotdata --run " + (dir / "fc").string() + " --out " + (dir / "plots").string());
  ASSERT_EQ(r.code, 0) << r.out;
  const std::string series = slurp(dir / "plots" / "series_fullycorrective.csv");
  EXPECT_EQ(series.substr(0, series.find('\n')), "t,gamma,kl,gap,gap_stderr,train_ll");
  EXPECT_EQ(std::count(series.begin(), series.end(), '\n'), 5);
  EXPECT_TRUE(fs::exists(dir / "plots" / "density_fullycorrective.csv"));
  fs::create_directories(dir / "empty");
  EXPECT_EQ(run("plotdata --run " + (dir / "empty").string()).code, 1);
  EXPECT_EQ(run("plotdata --run " + (dir / "nowhere").string()).code, 1);
}
