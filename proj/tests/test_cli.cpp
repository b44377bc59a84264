#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliRun {
  int status = -1;
  std::string output;  ///< stdout and stderr interleaved
};

CliRun run(const std::string& args) {
  const std::string cmd = std::string(CGLUE_CLI_PATH) + " " + args + " 2>&1";
  CliRun r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t got = 0;
  while ((got = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), got);
  const int raw = pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::string config(const std::string& name) { return std::string(CGLUE_CONFIG_DIR) + "/" + name + ".json"; }

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("cglue_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write_config(const std::string& name, const json& j) const {
    const fs::path p = dir_ / (name + ".json");
    std::ofstream(p) << j.dump(2);
    return p;
  }
  std::string out(const std::string& sub) const { return "--out " + (dir_ / sub).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, SolveOneDimensionalPasses) {
  const CliRun r = run("solve --config " + config("solve1d") + " " + out("a"));
  EXPECT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("PASS"), std::string::npos);
  const json rep = read_json(dir_ / "a" / "report.json");
  EXPECT_TRUE(rep["pass"].get<bool>());
  EXPECT_TRUE(fs::exists(dir_ / "a" / "summary.txt"));
  bool csv = false;
  for (const auto& e : fs::directory_iterator(dir_ / "a")) csv = csv || e.path().extension() == ".csv";
  EXPECT_TRUE(csv);
}

TEST_F(Cli, ReportDeterministicAcrossRunsAndThreads) {
  ASSERT_EQ(run("solve --config " + config("solve1d") + " " + out("a")).status, 0);
  ASSERT_EQ(run("solve --config " + config("solve1d") + " " + out("b")).status, 0);
  ASSERT_EQ(run("solve --config " + config("solve1d") + " --threads 1 " + out("c")).status, 0);
  const std::string a = slurp(dir_ / "a" / "report.json");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir_ / "b" / "report.json"));
  EXPECT_EQ(a, slurp(dir_ / "c" / "report.json"));
}

TEST_F(Cli, FailedCheckExitsOne) {
  json j = read_json(config("solve1d"));
  j["checks"]["max_rel_error"] = 1e-12;
  const CliRun r = run("solve --config " + write_config("strict", j).string() + " " + out("a"));
  EXPECT_EQ(r.status, 1) << r.output;
  EXPECT_NE(r.output.find("FAIL"), std::string::npos);
  EXPECT_FALSE(read_json(dir_ / "a" / "report.json")["pass"].get<bool>());
}

TEST_F(Cli, UnconvergedSolveExitsOneWithPartialReport) {
  json j = read_json(config("solve1d"));
  j["solver"]["max_iterations"] = 2;
  const CliRun r = run("solve --config " + write_config("short", j).string() + " " + out("a"));
  EXPECT_EQ(r.status, 1) << r.output;
  const json rep = read_json(dir_ / "a" / "report.json");
  EXPECT_EQ(rep["error_code"], "NoConvergence");
  EXPECT_EQ(rep["iterations"], 2);
}

TEST_F(Cli, KernelDimension) {
  const CliRun r = run("kernel-dim --config " + config("kernel-dim") + " " + out("a"));
  EXPECT_EQ(r.status, 0) << r.output;
  EXPECT_TRUE(read_json(dir_ / "a" / "report.json")["pass"].get<bool>());
}

TEST_F(Cli, ConformalInTwoDimensionsIsAConfigError) {
  json j = read_json(config("api-estimate"));
  j["dimension"] = 2;
  const CliRun r = run("api-estimate --config " + write_config("conf2d", j).string() + " " + out("a"));
  EXPECT_EQ(r.status, 2) << r.output;
  EXPECT_NE(r.output.find("dimension"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("line"), std::string::npos) << r.output;
}

TEST_F(Cli, MalformedConfigs) {
  const fs::path broken = dir_ / "broken.json";
  std::ofstream(broken) << "{\n  \"scenario\": \"solve1d\",\n  \"grid\": {\n";
  EXPECT_EQ(run("solve --config " + broken.string() + " " + out("a")).status, 2);

  json j = read_json(config("solve1d"));
  j["grid"]["cells"] = -4;
  const CliRun neg = run("solve --config " + write_config("neg", j).string() + " " + out("b"));
  EXPECT_EQ(neg.status, 2);
  EXPECT_NE(neg.output.find("grid.cells"), std::string::npos) << neg.output;

  EXPECT_EQ(run("glue --config " + config("solve1d") + " " + out("c")).status, 2);
  EXPECT_EQ(run("solve --config /nonexistent/cfg.json").status, 2);
  EXPECT_EQ(run("solve").status, 2);
  EXPECT_EQ(run("nonsense").status, 2);
}

TEST_F(Cli, PrintDefaultsRoundTrips) {
  const CliRun r = run("solve --print-defaults");
  ASSERT_EQ(r.status, 0) << r.output;
  const json j = json::parse(r.output);
  ASSERT_TRUE(j.is_object());
  ASSERT_TRUE(j.contains("solve1d"));
  const json solve1d = j["solve1d"];
  EXPECT_EQ(solve1d, read_json(config("solve1d")));
}

TEST_F(Cli, Selftest) {
  const CliRun r = run("selftest");
  EXPECT_EQ(r.status, 0) << r.output;
  EXPECT_EQ(r.output.find("FAIL"), std::string::npos) << r.output;
}
