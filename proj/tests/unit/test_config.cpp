#include <fstream>

#include <gtest/gtest.h>

#include "cfvi/config.hpp"
#include "cfvi/errors.hpp"
#include "support.hpp"

using namespace cfvi;

namespace {

std::string error_of(const std::string& text) {
  try {
    RunConfig c = parse_config(text, "cfg");
    c.finalize();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultsFinalize) {
  RunConfig c = parse_config("");
  c.finalize();
  EXPECT_EQ(c.system, "pendulum");
  EXPECT_EQ(c.train.target.lambda, 0.9);
  EXPECT_DOUBLE_EQ(c.train.target.dt, 0.01);
}

TEST(Config, ModeDependentLambda) {
  RunConfig c = parse_config("mode = rtdp\n");
  c.finalize();
  EXPECT_EQ(c.train.target.lambda, 0.5);
  c = parse_config("mode = rtdp\ntarget.lambda = 0.7\n");
  c.finalize();
  EXPECT_EQ(c.train.target.lambda, 0.7);
}

TEST(Config, ParsesEveryKind) {
  RunConfig c = parse_config(
      "# comment\n"
      "system = cartpole   # trailing comment\n"
      "seed = 12\n"
      "cartpole.pole_mass = 0.2\n"
      "system.u_max = 4\n"
      "system.domain_lo = -0.5, -3.14159, -2, -10\n"
      "reward.q = 10, 1, 0.5, 0.1\n"
      "ensemble.hidden = 64,64,64\n"
      "ensemble.activation = softplus\n"
      "eval.init = uniform\n"
      "eval.success_angle_deg = 10\n"
      "fit.objective = ensemble\n"
      "train.stop_success_rate = 0.8\n");
  c.finalize();
  EXPECT_EQ(c.system, "cartpole");
  EXPECT_EQ(c.train.seed, 12u);
  EXPECT_EQ(c.cartpole.pole_mass, 0.2);
  EXPECT_EQ((*c.u_max)[0], 4.0);
  EXPECT_EQ(c.train.ensemble.hidden, (std::vector<int>{64, 64, 64}));
  EXPECT_EQ(c.train.ensemble.activation, Activation::Softplus);
  EXPECT_EQ(c.eval.init, InitDistribution::UniformAngle);
  EXPECT_NEAR(c.eval.success_angle, 10 * kPi / 180, 1e-15);
  EXPECT_EQ(c.train.fit.objective, FitObjective::Ensemble);
  EXPECT_EQ(c.train.stop_success_rate, 0.8);
  const SystemSpec spec = build_system(c);
  EXPECT_EQ(spec.u_max[0], 4.0);
  EXPECT_EQ(spec.domain_lo[0], -0.5);
  EXPECT_EQ(build_reward(c, spec).q_diag[0], 10.0);
}

TEST(Config, ErrorsAreLineAnchored) {
  EXPECT_EQ(error_of("seed = 1\nbogus.key = 3\n").rfind("cfg:2:", 0), 0u);
  EXPECT_NE(error_of("seed = 1\nbogus.key = 3\n").find("unknown key"), std::string::npos);
  EXPECT_EQ(error_of("\n\nfit.epochs = many\n").rfind("cfg:3:", 0), 0u);
  EXPECT_EQ(error_of("no equals sign\n").rfind("cfg:1:", 0), 0u);
  EXPECT_EQ(error_of("seed = 1\nseed = 2\n").rfind("cfg:2:", 0), 0u);
}

TEST(Config, RejectsInvalidValues) {
  EXPECT_NE(error_of("target.lambda = 1.0\n"), "");
  EXPECT_NE(error_of("system = acrobot\n"), "");
  EXPECT_NE(error_of("ensemble.activation = relu\n"), "");
  EXPECT_NE(error_of("reward.q = 1\n"), "");
  EXPECT_NE(error_of("reward.q = -1, 1\n"), "");
  EXPECT_NE(error_of("system.domain_lo = 1, 1\nsystem.domain_hi = 0, 0\n"), "");
  EXPECT_NE(error_of("eval.n_rollouts = 0\n"), "");
  EXPECT_NE(error_of("fit.minibatch = 0\n"), "");
  EXPECT_NE(error_of("mode = mc\n"), "");
  EXPECT_NE(error_of("train.iterations = 2.5\n"), "");
  EXPECT_NE(error_of("pendulum.mass = -1\n"), "");
  EXPECT_NE(error_of("fit.objective = joint\n"), "");
  EXPECT_NE(error_of("train.stop_success_rate = 1.5\n"), "");
}

TEST(Config, ParamsOfOtherSystemsAreRejectedOnlyIfInvalid) {
  EXPECT_EQ(error_of("system = pendulum\ncartpole.cart_mass = 1.0\n"), "");
}

TEST(Config, ResolvedConfigRoundTrips) {
  RunConfig c = parse_config("system = furuta\nmode = rtdp\ntarget.rho = 2.5\nensemble.hidden = 32,16\n");
  c.finalize();
  const std::string text = resolved_config(c);
  RunConfig d = parse_config(text, "resolved");
  d.finalize();
  EXPECT_EQ(resolved_config(d), text);
  EXPECT_NE(text.find("furuta.pole_mass"), std::string::npos);
  EXPECT_EQ(text.find("cartpole."), std::string::npos);
  EXPECT_NE(text.find("target.lambda = 0.5"), std::string::npos);
}

TEST(Config, Overrides) {
  RunConfig c = parse_config("seed = 1\n");
  apply_override(c, "seed=5");
  apply_override(c, "train.iterations = 3");
  c.finalize();
  EXPECT_EQ(c.train.seed, 5u);
  EXPECT_EQ(c.train.iterations, 3);
  EXPECT_THROW(apply_override(c, "nokey"), ConfigError);
  EXPECT_THROW(apply_override(c, "x.y=1"), ConfigError);
}

TEST(Config, LoadFile) {
  testing_support::TempDir dir("config");
  {
    std::ofstream os(dir / "a.cfg");
    os << "seed = 3\nfit.epochs = x\n";
  }
  try {
    load_config(dir / "a.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("a.cfg:2:"), std::string::npos);
  }
  EXPECT_THROW(load_config(dir / "missing.cfg"), ConfigError);
}

TEST(Config, EveryKeyIsListed) {
  const auto keys = config_keys();
  for (const char* k : {"system", "mode", "seed", "output_dir", "checkpoint_every", "target.rho", "target.lambda",
                        "fit.epochs", "ensemble.members", "train.dataset_size", "eval.n_rollouts", "reward.beta",
                        "pendulum.mass", "cartpole.pole_length", "furuta.arm_mass", "system.sim_dt"})
    EXPECT_NE(std::find(keys.begin(), keys.end(), k), keys.end()) << k;
}
