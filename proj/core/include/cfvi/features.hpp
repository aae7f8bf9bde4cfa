#pragma once

#include <vector>

#include <Eigen/Core>

#include "cfvi/dynamics.hpp"

namespace cfvi {

/// Maps raw states onto the manifold the value network sees: each revolute position
/// q becomes (sin q, cos q); prismatic positions and all velocities pass through.
/// Layout of z: position features in joint order, then the velocities.
class FeatureTransform {
 public:
  FeatureTransform(std::vector<Joint> joints, State x_des);
  explicit FeatureTransform(const SystemSpec& spec) : FeatureTransform(spec.joints, spec.x_des) {}

  int state_dim() const { return static_cast<int>(2 * joints_.size()); }
  int feature_dim() const { return feature_dim_; }
  const Eigen::VectorXd& z_des() const { return z_des_; }
  const std::vector<Joint>& joints() const { return joints_; }

  Eigen::VectorXd transform(const State& x) const;
  /// dz/dx, feature_dim x state_dim.
  Eigen::MatrixXd jacobian(const State& x) const;

  /// Column-wise transform of a batch.
  void transform_batch(const Eigen::Ref<const StateBatch>& x, Eigen::Ref<Eigen::MatrixXd> z) const;
  /// Chain rule for a batch: grad_x(:, j) = (dz/dx at x_j)^T grad_z(:, j).
  void pullback_batch(const Eigen::Ref<const StateBatch>& x, const Eigen::Ref<const Eigen::MatrixXd>& grad_z,
                      Eigen::Ref<Eigen::MatrixXd> grad_x) const;

 private:
  std::vector<Joint> joints_;
  State x_des_;
  Eigen::VectorXd z_des_;
  int feature_dim_ = 0;
};

/// Coordinates the state reward is measured in: wrapped angle error for revolute
/// positions, plain difference for prismatic positions and velocities.
Eigen::VectorXd reward_coordinates(const SystemSpec& spec, const State& x);

}  // namespace cfvi
