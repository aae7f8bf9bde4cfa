#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "cfvi/dynamics.hpp"
#include "cfvi/evaluation.hpp"
#include "cfvi/reward.hpp"
#include "cfvi/training.hpp"

namespace cfvi {

/// Everything a run needs. Text form: one `section.key = value` per line, `#` comments,
/// vectors as comma-separated lists. Unknown keys are rejected.
struct RunConfig {
  std::string system = "pendulum";
  std::string output_dir = "runs/default";
  int checkpoint_every = 0;  // 0: only the final checkpoint

  PendulumParams pendulum;
  CartpoleParams cartpole;
  FurutaParams furuta;
  double sim_dt = 1.0 / 500.0;
  int control_substeps = 5;
  // Unset entries take the system defaults.
  std::optional<Eigen::VectorXd> u_max;
  std::optional<Eigen::VectorXd> domain_lo;
  std::optional<Eigen::VectorXd> domain_hi;
  std::optional<Eigen::VectorXd> reward_q;
  std::optional<double> reward_beta;
  /// Unset: 0.9 for DP, 0.5 for RTDP.
  std::optional<double> lambda;

  TrainConfig train;
  /// Protocol of the final evaluation; the curve points reuse it with train.eval_rollouts.
  EvalProtocol eval;

  /// Materialises mode-dependent defaults and validates every section.
  /// Throws ConfigError.
  void finalize();
};

/// Parses config text; errors are reported as "<source>:<line>: message".
RunConfig parse_config(std::string_view text, const std::string& source = "<config>");
/// Reads and parses a file; a missing file is a ConfigError.
RunConfig load_config(const std::string& path);
/// Applies one `section.key=value` override (the --set flag).
void apply_override(RunConfig& cfg, std::string_view assignment);
/// All keys of the configured system with every default materialised. Parsing the
/// result gives back an equivalent configuration.
std::string resolved_config(const RunConfig& cfg);
/// Names of every accepted key.
std::vector<std::string> config_keys();

SystemSpec build_system(const RunConfig& cfg);
RewardSpec build_reward(const RunConfig& cfg, const SystemSpec& spec);

}  // namespace cfvi
