#pragma once

#include <string_view>

#include <Eigen/Core>

#include "cfvi/dynamics.hpp"

namespace cfvi {

/// Separable reward r(x, u) = q(x) - g(u).
///
/// q is a negative definite quadratic over the reward coordinates (see
/// reward_coordinates()); g is the log-cosine barrier
///   g(u) = sum_i -2 beta u_max_i / pi * log cos(pi u_i / (2 u_max_i)),
/// which is strictly convex, zero at the origin and infinite on the bound.
struct RewardSpec {
  Eigen::VectorXd q_diag;
  double action_cost_beta = 0.5;
  Eigen::VectorXd u_max;
  Eigen::VectorXd goal;  // in reward coordinates; zeros for the built-in systems

  void validate() const;
};

/// Reward constants for "pendulum", "cartpole" and "furuta".
RewardSpec make_reward(const SystemSpec& spec);

/// -(e - goal)^T Q (e - goal); e are reward coordinates.
double state_reward(const RewardSpec& rs, const Eigen::Ref<const Eigen::VectorXd>& e);

/// Barrier cost g(u). Throws DomainError if any |u_i| >= u_max_i.
double action_cost(const RewardSpec& rs, const Eigen::Ref<const Eigen::VectorXd>& u);

/// grad g(u) = beta tan(pi u / (2 u_max)), elementwise.
Eigen::VectorXd action_cost_gradient(const RewardSpec& rs, const Eigen::Ref<const Eigen::VectorXd>& u);

/// Gradient of the convex conjugate of g, i.e. the inverse of grad g:
/// u = 2 u_max / pi * atan(w / beta), elementwise. Always strictly inside the box.
Eigen::VectorXd conjugate_gradient(const RewardSpec& rs, const Eigen::Ref<const Eigen::VectorXd>& w);

/// state_reward(e) - action_cost(u).
double reward(const RewardSpec& rs, const Eigen::Ref<const Eigen::VectorXd>& e,
              const Eigen::Ref<const Eigen::VectorXd>& u);

}  // namespace cfvi
