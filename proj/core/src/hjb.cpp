#include "cfvi/hjb.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cfvi/errors.hpp"
#include "cfvi/features.hpp"
#include "cfvi/parallel.hpp"

namespace cfvi {

namespace {

constexpr Eigen::Index kTargetChunk = 256;

// r(x_j, u_j) for every column, reward coordinates computed in place.
Eigen::VectorXd reward_rates(const RewardSpec& rs, const SystemSpec& spec, const Eigen::Ref<const StateBatch>& x,
                             const Eigen::Ref<const ActionBatch>& u) {
  Eigen::VectorXd r(x.cols());
  Eigen::VectorXd e(spec.state_dim);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    e = x.col(j) - spec.x_des;
    for (std::size_t i = 0; i < spec.joints.size(); ++i)
      if (spec.joints[i] == Joint::Revolute) e[static_cast<Eigen::Index>(i)] = wrap_angle(e[static_cast<Eigen::Index>(i)]);
    r[j] = state_reward(rs, e) - action_cost(rs, u.col(j));
  }
  return r;
}

}  // namespace

int TargetConfig::horizon() const {
  if (lambda <= 0.0) return 1;
  const double h = std::ceil(std::log(cutoff_weight) / std::log(lambda));
  return std::max(1, static_cast<int>(h));
}

double TargetConfig::gamma() const { return std::exp(-rho * dt); }

void TargetConfig::validate() const {
  if (!(rho >= 0.0)) throw ConfigError("target.rho must be >= 0");
  if (!(lambda >= 0.0 && lambda < 1.0)) throw ConfigError("target.lambda must be in [0, 1)");
  if (!(dt > 0.0)) throw ConfigError("target.dt must be positive");
  if (!(cutoff_weight > 0.0 && cutoff_weight < 1.0)) throw ConfigError("target.cutoff_weight must be in (0, 1)");
}

std::vector<double> target_weights(const TargetConfig& tc) {
  const int h = tc.horizon();
  std::vector<double> w(static_cast<std::size_t>(h));
  double lam_pow = 1.0;  // lambda^{n-1}
  for (int n = 1; n < h; ++n) {
    w[static_cast<std::size_t>(n - 1)] = (1.0 - tc.lambda) * lam_pow;
    lam_pow *= tc.lambda;
  }
  w[static_cast<std::size_t>(h - 1)] = lam_pow;
  return w;
}

ActionBatch policy_batch(const ValueModel& value, const RewardSpec& rs, const SystemSpec& spec,
                         const Eigen::Ref<const StateBatch>& x, Eigen::RowVectorXd* values) {
  if (x.rows() != spec.state_dim || value.state_dim() != spec.state_dim)
    throw ContractViolation("policy: dimension mismatch");
  Eigen::RowVectorXd v(x.cols());
  Eigen::MatrixXd grad;
  value.evaluate_batch(x, v, &grad);
  const Eigen::MatrixXd w = project_on_controls(spec, x, grad);
  ActionBatch u(spec.action_dim, x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) u.col(j) = conjugate_gradient(rs, w.col(j));
  if (values) *values = std::move(v);
  return u;
}

Action policy(const ValueModel& value, const RewardSpec& rs, const SystemSpec& spec, const State& x) {
  if (x.size() != spec.state_dim) throw ContractViolation("policy: state has wrong dimension");
  return policy_batch(value, rs, spec, x).col(0);
}

Rollout rollout_policy(const ValueModel& value, const RewardSpec& rs, const SystemSpec& spec, const State& x0,
                       int steps) {
  if (steps < 1) throw ContractViolation("rollout_policy: steps must be >= 1");
  if (x0.size() != spec.state_dim) throw ContractViolation("rollout_policy: state has wrong dimension");
  Rollout out;
  out.states.resize(spec.state_dim, steps + 1);
  out.actions.resize(spec.action_dim, steps);
  out.reward_rates.resize(steps);
  out.states.col(0) = x0;
  for (int t = 0; t < steps; ++t) {
    const State x = out.states.col(t);
    const Action u = policy(value, rs, spec, x);
    out.actions.col(t) = u;
    out.reward_rates[t] = reward(rs, reward_coordinates(spec, x), u);
    out.states.col(t + 1) = control_step(spec, x, u);
  }
  return out;
}

TargetBatch n_step_targets(const ValueModel& value, const RewardSpec& rs, const SystemSpec& spec,
                           const TargetConfig& tc, const Eigen::Ref<const StateBatch>& states, bool keep_rollouts) {
  tc.validate();
  if (states.cols() == 0) throw ContractViolation("n_step_targets: empty batch");
  if (states.rows() != spec.state_dim) throw ContractViolation("n_step_targets: state dimension mismatch");
  if (std::abs(tc.dt - spec.control_dt()) > 1e-12)
    throw ContractViolation("n_step_targets: target dt must equal the control period of the system");

  const int horizon = tc.horizon();
  const std::vector<double> weights = target_weights(tc);
  const double gamma = tc.gamma();
  const Eigen::Index batch = states.cols();

  TargetBatch out;
  out.horizon = horizon;
  out.targets.resize(batch);
  out.valid.assign(static_cast<std::size_t>(batch), 1);
  if (keep_rollouts) {
    out.rollout_states.resize(static_cast<std::size_t>(batch));
    out.rollout_rewards.resize(horizon, batch);
  }

  const auto chunks = static_cast<std::size_t>((batch + kTargetChunk - 1) / kTargetChunk);
  parallel_for(chunks, [&](std::size_t cb, std::size_t ce) {
    for (std::size_t c = cb; c < ce; ++c) {
      const Eigen::Index begin = static_cast<Eigen::Index>(c) * kTargetChunk;
      const Eigen::Index cols = std::min(kTargetChunk, batch - begin);
      StateBatch x = states.middleCols(begin, cols);
      Eigen::VectorXd discounted_rewards = Eigen::VectorXd::Zero(cols);
      Eigen::VectorXd target = Eigen::VectorXd::Zero(cols);
      std::vector<char> alive(static_cast<std::size_t>(cols), 1);
      Eigen::RowVectorXd v(cols);
      double discount = 1.0;  // gamma^n
      if (keep_rollouts)
        for (Eigen::Index j = 0; j < cols; ++j) {
          auto& traj = out.rollout_states[static_cast<std::size_t>(begin + j)];
          traj.resize(spec.state_dim, horizon + 1);
          traj.col(0) = x.col(j);
        }

      for (int n = 0; n < horizon; ++n) {
        const ActionBatch u = policy_batch(value, rs, spec, x, &v);
        if (n >= 1) target += weights[static_cast<std::size_t>(n - 1)] * (discounted_rewards + discount * v.transpose());
        const Eigen::VectorXd r = reward_rates(rs, spec, x, u);
        if (keep_rollouts) out.rollout_rewards.block(n, begin, 1, cols) = r.transpose();
        discounted_rewards += discount * tc.dt * r;
        discount *= gamma;
        for (Eigen::Index j = 0; j < cols; ++j) {
          auto xj = x.col(j);
          if (alive[static_cast<std::size_t>(j)] && !control_step_inplace(spec, xj, u.col(j))) {
            alive[static_cast<std::size_t>(j)] = 0;
          }
          // Park diverged samples at the goal so they cannot poison the batch.
          if (!alive[static_cast<std::size_t>(j)]) xj = spec.x_des;
          if (keep_rollouts) out.rollout_states[static_cast<std::size_t>(begin + j)].col(n + 1) = xj;
        }
      }
      value.evaluate_batch(x, v, nullptr);
      target += weights.back() * (discounted_rewards + discount * v.transpose());

      for (Eigen::Index j = 0; j < cols; ++j) {
        const auto k = static_cast<std::size_t>(begin + j);
        if (!alive[static_cast<std::size_t>(j)] || !std::isfinite(target[j])) {
          out.valid[k] = 0;
          out.targets[begin + j] = std::numeric_limits<double>::quiet_NaN();
        } else {
          out.targets[begin + j] = target[j];
        }
      }
    }
  });
  out.invalid_count = static_cast<int>(std::count(out.valid.begin(), out.valid.end(), 0));
  return out;
}

}  // namespace cfvi
