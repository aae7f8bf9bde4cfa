#include "cfvi/reward.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cfvi/errors.hpp"

namespace cfvi {

void RewardSpec::validate() const {
  if (q_diag.size() == 0 || (q_diag.array() <= 0.0).any())
    throw ContractViolation("RewardSpec: Q diagonal entries must be positive");
  if (!(action_cost_beta > 0.0)) throw ContractViolation("RewardSpec: action_cost_beta must be positive");
  if (u_max.size() == 0 || (u_max.array() <= 0.0).any())
    throw ContractViolation("RewardSpec: u_max must be positive");
  if (goal.size() != q_diag.size()) throw ContractViolation("RewardSpec: goal has wrong dimension");
}

RewardSpec make_reward(const SystemSpec& spec) {
  RewardSpec rs;
  rs.u_max = spec.u_max;
  rs.goal = Eigen::VectorXd::Zero(spec.state_dim);
  if (spec.id == "pendulum") {
    rs.q_diag = (Eigen::VectorXd(2) << 1.0, 0.1).finished();
    rs.action_cost_beta = 0.5;
  } else if (spec.id == "cartpole") {
    rs.q_diag = (Eigen::VectorXd(4) << 25.0, 1.0, 0.5, 0.1).finished();
    rs.action_cost_beta = 0.1;
  } else if (spec.id == "furuta") {
    rs.q_diag = (Eigen::VectorXd(4) << 1.0, 5.0, 0.1, 0.1).finished();
    rs.action_cost_beta = 0.1;
  } else {
    throw ConfigError("no default reward for system '" + spec.id + "'");
  }
  return rs;
}

double state_reward(const RewardSpec& rs, const Eigen::Ref<const Eigen::VectorXd>& e) {
  if (e.size() != rs.q_diag.size()) throw ContractViolation("state_reward: dimension mismatch");
  const Eigen::VectorXd d = e - rs.goal;
  return -(d.array().square() * rs.q_diag.array()).sum();
}

double action_cost(const RewardSpec& rs, const Eigen::Ref<const Eigen::VectorXd>& u) {
  if (u.size() != rs.u_max.size()) throw ContractViolation("action_cost: dimension mismatch");
  double g = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    if (!(std::abs(u[i]) < rs.u_max[i])) {
      std::ostringstream os;
      os << "action_cost: |u[" << i << "]| = " << std::abs(u[i]) << " violates the barrier at " << rs.u_max[i];
      throw DomainError(os.str());
    }
    const double scale = 2.0 * rs.action_cost_beta * rs.u_max[i] / kPi;
    g -= scale * std::log(std::cos(kPi * u[i] / (2.0 * rs.u_max[i])));
  }
  return g;
}

Eigen::VectorXd action_cost_gradient(const RewardSpec& rs, const Eigen::Ref<const Eigen::VectorXd>& u) {
  if (u.size() != rs.u_max.size()) throw ContractViolation("action_cost_gradient: dimension mismatch");
  return rs.action_cost_beta * (kPi * u.array() / (2.0 * rs.u_max.array())).tan();
}

Eigen::VectorXd conjugate_gradient(const RewardSpec& rs, const Eigen::Ref<const Eigen::VectorXd>& w) {
  if (w.size() != rs.u_max.size()) throw ContractViolation("conjugate_gradient: dimension mismatch");
  Eigen::VectorXd u = (2.0 / kPi) * rs.u_max.array() * (w.array() / rs.action_cost_beta).atan();
  // atan rounds to pi/2 for |w| beyond ~1e16; keep the result strictly inside the box.
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double inner = std::nextafter(rs.u_max[i], 0.0);
    u[i] = std::clamp(u[i], -inner, inner);
  }
  return u;
}

double reward(const RewardSpec& rs, const Eigen::Ref<const Eigen::VectorXd>& e,
              const Eigen::Ref<const Eigen::VectorXd>& u) {
  return state_reward(rs, e) - action_cost(rs, u);
}

}  // namespace cfvi
