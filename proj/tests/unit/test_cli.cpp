#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "cli.hpp"
#include "support.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "cfvi");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cfvi::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int count_lines(const fs::path& p) {
  std::ifstream is(p);
  std::string line;
  int n = 0;
  while (std::getline(is, line)) ++n;
  return n;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg_ = dir_ / "tiny.cfg";
    std::ofstream os(cfg_);
    os << "system = pendulum\n"
          "seed = 3\n"
          "target.rho = 1.0\n"
          "train.iterations = 2\n"
          "train.dataset_size = 300\n"
          "train.eval_every = 1\n"
          "train.eval_rollouts = 2\n"
          "fit.epochs = 1\n"
          "ensemble.hidden = 16,16\n"
          "ensemble.members = 2\n"
          "eval.n_rollouts = 3\n"
          "eval.duration = 2\n";
  }
  testing_support::TempDir dir_{"cli"};
  std::string cfg_;
};

}  // namespace

TEST_F(Cli, NoSubcommandIsUsageError) { EXPECT_EQ(run({}).code, 1); }

TEST_F(Cli, HelpIsOk) { EXPECT_EQ(run({"--help"}).code, 0); }

TEST_F(Cli, MissingConfigFile) {
  const Result r = run({"train", dir_ / "nope.cfg"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("nope.cfg"), std::string::npos);
}

TEST_F(Cli, BadConfigLineIsReported) {
  {
    std::ofstream os(dir_ / "bad.cfg");
    os << "seed = 1\n\nfit.epochs = lots\n";
  }
  const Result r = run({"train", dir_ / "bad.cfg"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("bad.cfg:3:"), std::string::npos) << r.err;
}

TEST_F(Cli, ZeroIterationsWritesInitialCheckpoint) {
  const Result r = run({"train", cfg_, "--set", "train.iterations=0", "--out", dir_ / "k0", "--skip-eval"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir_.path() / "k0" / "ckpt_pendulum_dp_0"));
  EXPECT_TRUE(fs::exists(dir_.path() / "k0" / "config.resolved"));
}

TEST_F(Cli, TrainEvalExport) {
  const std::string out = dir_ / "run";
  Result r = run({"train", cfg_, "--out", out, "--deterministic", "--quiet"});
  ASSERT_EQ(r.code, 0) << r.err;
  const fs::path run_dir(out);
  EXPECT_TRUE(fs::exists(run_dir / "ckpt_pendulum_dp_2"));
  EXPECT_EQ(count_lines(run_dir / "learning_curve.csv"), 3);
  EXPECT_EQ(read_file(run_dir / "learning_curve.csv").find("seconds"), std::string::npos);
  EXPECT_TRUE(fs::exists(run_dir / "timing.csv"));
  const auto summary = nlohmann::json::parse(read_file(run_dir / "eval_summary.json"));
  EXPECT_EQ(summary["n_rollouts"], 3);

  // the resolved snapshot alone reproduces the run
  r = run({"train", (run_dir / "config.resolved").string(), "--out", dir_ / "again", "--deterministic", "--quiet"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_file(run_dir / "learning_curve.csv"), read_file(dir_.path() / "again" / "learning_curve.csv"));

  const std::string ckpt = (run_dir / "ckpt_pendulum_dp_2").string();
  r = run({"eval", ckpt, "--rollouts", "2", "--duration", "1.5", "--out", dir_ / "e.json", "--traces", dir_ / "tr"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(read_file(dir_.path() / "e.json"))["n_rollouts"], 2);
  EXPECT_EQ(count_lines(dir_.path() / "tr" / "trace_1.csv"), 152);

  r = run({"eval", ckpt, "--set", "ensemble.members=3"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("architecture"), std::string::npos);

  r = run({"export-value-grid", ckpt, "--resolution", "3x3", "--out", dir_ / "grid.csv"});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string grid = read_file(dir_.path() / "grid.csv");
  EXPECT_EQ(grid.substr(0, grid.find('\n')), "theta,theta_dot,value,action");
  EXPECT_EQ(count_lines(dir_.path() / "grid.csv"), 10);
  EXPECT_NE(grid.find("\n0,0,0,0\n"), std::string::npos) << grid;

  EXPECT_EQ(run({"export-value-grid", ckpt, "--resolution", "3by3"}).code, 1);
}

TEST_F(Cli, ResumeAppendsToCurve) {
  const std::string out = dir_ / "res";
  ASSERT_EQ(run({"train", cfg_, "--out", out, "--set", "train.iterations=1", "--deterministic", "--quiet"}).code, 0);
  const Result r = run({"train", cfg_, "--out", out, "--resume", (fs::path(out) / "ckpt_pendulum_dp_1").string(),
                        "--deterministic", "--quiet"});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string resumed = read_file(fs::path(out) / "learning_curve.csv");
  ASSERT_EQ(run({"train", cfg_, "--out", dir_ / "straight", "--deterministic", "--quiet"}).code, 0);
  EXPECT_EQ(resumed, read_file(dir_.path() / "straight" / "learning_curve.csv"));
}

TEST_F(Cli, MissingCheckpoint) { EXPECT_EQ(run({"eval", dir_ / "nothing"}).code, 1); }

TEST_F(Cli, FreshEnsembleFailsToSwingUp) {
  ASSERT_EQ(run({"train", cfg_, "--set", "train.iterations=0", "--out", dir_ / "fresh", "--skip-eval"}).code, 0);
  const Result r = run({"eval", (dir_.path() / "fresh" / "ckpt_pendulum_dp_0").string(), "--rollouts", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out.substr(r.out.find('{')));
  EXPECT_EQ(j["success_rate"], 0.0);
}

TEST_F(Cli, OracleExitCodes) {
  EXPECT_EQ(run({"oracle", "--system", "cartpole"}).code, 1);
  Result r = run({"oracle", "--theta-nodes", "51", "--velocity-nodes", "51", "--max-sweeps", "2", "--out", dir_ / "o"});
  EXPECT_EQ(r.code, 3);
  EXPECT_TRUE(fs::exists(dir_.path() / "o" / "oracle_convergence.csv"));
  r = run({"oracle", "--theta-nodes", "51", "--velocity-nodes", "51", "--tol", "1e-3", "--out", dir_ / "o2"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("sweeps"), std::string::npos);
  EXPECT_EQ(count_lines(dir_.path() / "o2" / "oracle_grid.csv"), 51 * 51 + 1);
  EXPECT_EQ(run({"oracle", "--theta-nodes", "5"}).code, 1);
}

TEST_F(Cli, DivergenceExitCode) {
  const Result r = run({"train", cfg_, "--out", dir_ / "div", "--set", "fit.learning_rate=1e300", "--quiet"});
  EXPECT_EQ(r.code, 2) << r.err;
  EXPECT_TRUE(fs::exists(dir_.path() / "div" / "abort.json"));
}

TEST_F(Cli, AblateWritesCurvesPerSeed) {
  EXPECT_EQ(run({"ablate", "width", cfg_}).code, 1);
  const Result r = run({"ablate", "lambda", cfg_, "--values", "0.1", "0.5", "0.9", "--seeds", "3", "--out",
                        dir_ / "abl", "--set", "train.iterations=1", "--quiet"});
  ASSERT_EQ(r.code, 0) << r.err;
  int curves = 0;
  for (const auto& e : fs::directory_iterator(dir_.path() / "abl"))
    if (e.path().extension() == ".csv" && e.path().filename().string().rfind("lambda_", 0) == 0) ++curves;
  EXPECT_EQ(curves, 9);
  EXPECT_EQ(count_lines(dir_.path() / "abl" / "summary.csv"), 1 + 3);
  EXPECT_EQ(count_lines(dir_.path() / "abl" / "iterations_to_success.csv"), 1 + 9);
}

TEST_F(Cli, OutputRootEnvironment) {
  ::setenv("CFVI_OUTPUT_ROOT", dir_.path().c_str(), 1);
  const Result r = run({"train", cfg_, "--set", "train.iterations=0", "--out", "rooted", "--skip-eval"});
  ::unsetenv("CFVI_OUTPUT_ROOT");
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir_.path() / "rooted" / "ckpt_pendulum_dp_0"));
}
