#pragma once

#include <vector>

#include <Eigen/Core>

#include "cfvi/dynamics.hpp"
#include "cfvi/reward.hpp"
#include "cfvi/value_model.hpp"

namespace cfvi {

/// Exponentially weighted n-step value target, discretised at the control period dt.
struct TargetConfig {
  double rho = 4.6;           // continuous discount rate, 1/s
  double lambda = 0.9;        // trace decay per control step
  double dt = 0.01;           // control period, s
  double cutoff_weight = 1e-4;

  /// ceil(ln(cutoff_weight) / ln(lambda)) for lambda > 0, else 1.
  int horizon() const;
  double gamma() const;
  void validate() const;
};

/// Optimal action for the value function: u = grad g~(B(x)^T dV/dx).
Action policy(const ValueModel& value, const RewardSpec& rs, const SystemSpec& spec, const State& x);
/// Batched policy; also returns V at the states when `values` is not null.
ActionBatch policy_batch(const ValueModel& value, const RewardSpec& rs, const SystemSpec& spec,
                         const Eigen::Ref<const StateBatch>& x, Eigen::RowVectorXd* values = nullptr);

struct Rollout {
  StateBatch states;            // state_dim x (steps + 1)
  ActionBatch actions;          // action_dim x steps
  Eigen::VectorXd reward_rates; // r(x_t, u_t) per control step
};

/// Closed-loop rollout under the current policy; each action is held for one control
/// period. Throws IntegrationBlowup.
Rollout rollout_policy(const ValueModel& value, const RewardSpec& rs, const SystemSpec& spec, const State& x0,
                       int steps);

struct TargetBatch {
  Eigen::VectorXd targets;        // NaN where invalid
  std::vector<char> valid;
  int invalid_count = 0;
  int horizon = 0;
  /// Optional diagnostics: predicted states (state_dim x (horizon + 1)) per input, and
  /// reward rates (horizon x batch).
  std::vector<StateBatch> rollout_states;
  Eigen::MatrixXd rollout_rewards;
};

/// V_tar = sum_{n=1}^{H-1} (1 - lambda) lambda^{n-1} R_n + lambda^{H-1} R_H with
/// R_n = sum_{i<n} gamma^i r(x_i, u_i) dt + gamma^n V(x_n), gamma = exp(-rho dt).
/// One forward rollout per state under the frozen value function. Diverging rollouts
/// are flagged invalid instead of throwing.
TargetBatch n_step_targets(const ValueModel& value, const RewardSpec& rs, const SystemSpec& spec,
                           const TargetConfig& tc, const Eigen::Ref<const StateBatch>& states,
                           bool keep_rollouts = false);

/// Return weights (w_1, ..., w_H) of the target above.
std::vector<double> target_weights(const TargetConfig& tc);

}  // namespace cfvi
