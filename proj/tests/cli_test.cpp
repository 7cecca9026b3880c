#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cmath>

#include "cli_util.hpp"

namespace lqmf {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using test::model_path;
using test::read_file;
using test::run_cli;

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override { out_ = test::scratch_dir("cli"); }
  void TearDown() override { fs::remove_all(out_); }
  std::string out() const { return " --out '" + out_.string() + "'"; }
  fs::path out_;
};

TEST_F(CliTest, CheckExitCodes) {
  EXPECT_EQ(run_cli("check --model " + model_path("m0")).code, 0);
  const auto bad = run_cli("check --model " + model_path("h1_fails"));
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.out.find("H1 fails"), std::string::npos);
  EXPECT_EQ(run_cli("check --model " + model_path("malformed")).code, 2);
  EXPECT_EQ(run_cli("check --model /nonexistent.json").code, 2);
  EXPECT_EQ(run_cli("frobnicate").code, 2);
  const auto j = run_cli("check --json --model " + model_path("common_noise_2d"));
  EXPECT_EQ(j.code, 0);
  EXPECT_TRUE(json::parse(j.out).at("h2_ok").get<bool>());
}

TEST_F(CliTest, SolveErgodic) {
  const auto r = run_cli("solve ergodic --json --model " + model_path("m0") + out());
  ASSERT_EQ(r.code, 0);
  const json j = json::parse(r.out);
  EXPECT_NEAR(j.at("result").at("P")[0][0].get<double>(), std::sqrt(2.0) - 1.0, 1e-10);
  EXPECT_TRUE(fs::exists(fs::path(j.at("run_dir").get<std::string>()) / "ergodic.json"));
  EXPECT_TRUE(fs::exists(fs::path(j.at("run_dir").get<std::string>()) / "manifest.json"));
}

TEST_F(CliTest, SolveMfcAndSoc) {
  const auto r = run_cli("solve mfc --T 1 --json --model " + model_path("m0") + out());
  ASSERT_EQ(r.code, 0);
  const json j = json::parse(r.out);
  EXPECT_NEAR(j.at("result").at("P0")[0][0].get<double>(), 0.385818596186339, 1e-9);
  const std::string csv = read_file(fs::path(j.at("run_dir").get<std::string>()) / "path.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "t,P_0_0,Pibar_0_0,p_0,kappa");

  const auto z = run_cli("solve mfc --T 0 --model " + model_path("m0") + out());
  ASSERT_EQ(z.code, 0);
  const std::string zcsv = read_file(test::first_line(z.out) / "path.csv");
  EXPECT_EQ(std::count(zcsv.begin(), zcsv.end(), '\n'), 2);

  EXPECT_EQ(run_cli("solve soc --T 1 --model " + model_path("m0") + out()).code, 2);
  EXPECT_EQ(run_cli("solve mfc --model " + model_path("m0") + out()).code, 2);
  EXPECT_EQ(run_cli("solve mfc --T -1 --model " + model_path("m0") + out()).code, 2);
  const auto s = run_cli("solve soc --T 1 --N 4 --json --model " + model_path("m0_qbar1") + out());
  ASSERT_EQ(s.code, 0);
  EXPECT_EQ(json::parse(s.out).at("result").at("N").get<int>(), 4);
}

TEST_F(CliTest, SolverErrorExitCode) {
  // the H1 violation surfaces as a solver failure of the Riccati solve
  EXPECT_EQ(run_cli("solve mfc --T 1 --model " + model_path("h1_fails") + out()).code, 1);
}

TEST_F(CliTest, SimulateAndStudies) {
  const auto r = run_cli("simulate --law ergodic --T 1 --replicas 64 --json --model " +
                         model_path("m0_sigma1") + out());
  ASSERT_EQ(r.code, 0);
  const fs::path dir = json::parse(r.out).at("run_dir").get<std::string>();
  EXPECT_TRUE(fs::exists(dir / "summary.csv"));
  EXPECT_TRUE(fs::exists(dir / "result.json"));
  EXPECT_EQ(run_cli("simulate --law soc --T 1 --model " + model_path("m0") + out()).code, 2);

  const auto n = run_cli("study nrate --no-sim --model " + model_path("m0_qbar1") + out());
  ASSERT_EQ(n.code, 0);
  EXPECT_NE(n.out.find("PASS"), std::string::npos);
  EXPECT_TRUE(fs::exists(test::first_line(n.out) / "nrate.csv"));
  EXPECT_EQ(run_cli("study nrate --no-sim --N-list 8,x --model " + model_path("m0") + out()).code, 2);
  EXPECT_EQ(run_cli("study wobble --model " + model_path("m0") + out()).code, 2);

  const auto v = run_cli("study value --no-sim --T-list 5,10,20 --model " +
                         model_path("m0_sigma1") + out());
  EXPECT_EQ(v.code, 0);
  EXPECT_TRUE(fs::exists(test::first_line(v.out) / "value.csv"));
}

TEST_F(CliTest, RerunReproducesOutputs) {
  const std::string args = "simulate --law mfc --T 0.5 --replicas 32 --paths 2 --model " +
                           model_path("common_noise_2d");
  const auto a = run_cli(args + " --seed 7" + out());
  ASSERT_EQ(a.code, 0);
  const fs::path dir = test::first_line(a.out);
  const std::string summary = read_file(dir / "summary.csv");
  const fs::path other = test::scratch_dir("rerun");
  const auto b = run_cli("rerun --manifest '" + (dir / "manifest.json").string() + "' --out '" +
                         other.string() + "'");
  ASSERT_EQ(b.code, 0);
  const fs::path dir2 = test::first_line(b.out);
  EXPECT_EQ(dir.filename(), dir2.filename());
  EXPECT_EQ(read_file(dir2 / "summary.csv"), summary);
  EXPECT_EQ(read_file(dir2 / "result.json"), read_file(dir / "result.json"));
  fs::remove_all(other);
  // a different seed is a different run
  const auto c = run_cli(args + " --seed 8" + out());
  EXPECT_NE(test::first_line(c.out), dir);
}

}  // namespace
}  // namespace lqmf
