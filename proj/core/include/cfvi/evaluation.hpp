#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "cfvi/dynamics.hpp"
#include "cfvi/reward.hpp"
#include "cfvi/value_model.hpp"

namespace cfvi {

enum class InitDistribution { Downward, UniformAngle };

InitDistribution parse_init(std::string_view name);
std::string to_string(InitDistribution init);

struct EvalProtocol {
  int n_rollouts = 100;
  double duration = 15.0;        // s
  InitDistribution init = InitDistribution::Downward;
  double success_window = 1.0;   // s
  double success_angle = 5.0 * kPi / 180.0;  // rad, strict
  double init_jitter = 0.01;     // rad, std of the initial angle
  double rho = 4.6;              // discount rate of the reported reward, 1/s

  void validate() const;
};

struct RolloutTrace {
  Eigen::VectorXd times;         // one entry per stored state
  StateBatch states;             // state_dim x samples
  ActionBatch actions;           // action_dim x (samples - 1)
  Eigen::VectorXd reward_rates;  // per control step
  double cumulative_reward = 0.0;  // sum gamma^i r_i dt
  double dt = 0.0;
  int pendulum_index = 0;
  bool blowup = false;
  bool success = false;
};

struct EvalResult {
  double success_rate = 0.0;
  double reward_mean = 0.0;
  double reward_ci95 = 0.0;  // 1.96 sigma of the episode rewards
  double reward_min = 0.0;
  double reward_max = 0.0;
  int blowups = 0;
  std::vector<double> rewards;
  std::vector<RolloutTrace> traces;
};

/// Initial states of the protocol (state_dim x n_rollouts).
StateBatch initial_states(const SystemSpec& spec, const EvalProtocol& ep, std::uint64_t seed);

/// Noiseless closed-loop episodes under the value function's policy, batched across
/// episodes. Integration blowups end the episode as a failure.
EvalResult evaluate_policy(const ValueModel& value, const RewardSpec& rs, const SystemSpec& spec,
                           const EvalProtocol& ep, std::uint64_t seed, bool keep_traces = true);

/// Same protocol from explicit initial states (one column per episode); ep.n_rollouts is ignored.
EvalResult evaluate_from(const ValueModel& value, const RewardSpec& rs, const SystemSpec& spec,
                         const EvalProtocol& ep, const Eigen::Ref<const StateBatch>& starts, bool keep_traces = true);

/// |wrapped pendulum angle| < success_angle at every sample of the final success_window.
bool success(const RolloutTrace& trace, const EvalProtocol& ep);

/// CSV columns: t, x0..x{n-1}, u0..u{m-1}, reward. The final state has no action and
/// leaves the action and reward columns empty.
void write_trace_csv(std::ostream& os, const RolloutTrace& trace);
/// {"success_rate", "mean", "ci95", ...} as JSON.
void write_summary_json(std::ostream& os, const EvalResult& result);

}  // namespace cfvi
