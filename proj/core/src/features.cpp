#include "cfvi/features.hpp"

#include <cmath>

#include "cfvi/errors.hpp"

namespace cfvi {

FeatureTransform::FeatureTransform(std::vector<Joint> joints, State x_des)
    : joints_(std::move(joints)), x_des_(std::move(x_des)) {
  if (joints_.empty()) throw ContractViolation("FeatureTransform: no joints");
  if (x_des_.size() != state_dim()) throw ContractViolation("FeatureTransform: x_des has wrong dimension");
  feature_dim_ = static_cast<int>(joints_.size());  // velocities
  for (const Joint j : joints_) feature_dim_ += (j == Joint::Revolute) ? 2 : 1;
  z_des_ = transform(x_des_);
}

Eigen::VectorXd FeatureTransform::transform(const State& x) const {
  if (x.size() != state_dim()) throw ContractViolation("transform: state has wrong dimension");
  Eigen::VectorXd z(feature_dim_);
  transform_batch(x, z);
  return z;
}

Eigen::MatrixXd FeatureTransform::jacobian(const State& x) const {
  if (x.size() != state_dim()) throw ContractViolation("jacobian: state has wrong dimension");
  const int nq = static_cast<int>(joints_.size());
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(feature_dim_, state_dim());
  int r = 0;
  for (int i = 0; i < nq; ++i) {
    if (joints_[static_cast<std::size_t>(i)] == Joint::Revolute) {
      jac(r++, i) = std::cos(x[i]);
      jac(r++, i) = -std::sin(x[i]);
    } else {
      jac(r++, i) = 1.0;
    }
  }
  for (int i = 0; i < nq; ++i) jac(r++, nq + i) = 1.0;
  return jac;
}

void FeatureTransform::transform_batch(const Eigen::Ref<const StateBatch>& x, Eigen::Ref<Eigen::MatrixXd> z) const {
  const int nq = static_cast<int>(joints_.size());
  for (Eigen::Index col = 0; col < x.cols(); ++col) {
    int r = 0;
    for (int i = 0; i < nq; ++i) {
      const double q = x(i, col);
      if (joints_[static_cast<std::size_t>(i)] == Joint::Revolute) {
        z(r++, col) = std::sin(q);
        z(r++, col) = std::cos(q);
      } else {
        z(r++, col) = q;
      }
    }
    for (int i = 0; i < nq; ++i) z(r++, col) = x(nq + i, col);
  }
}

void FeatureTransform::pullback_batch(const Eigen::Ref<const StateBatch>& x,
                                      const Eigen::Ref<const Eigen::MatrixXd>& grad_z,
                                      Eigen::Ref<Eigen::MatrixXd> grad_x) const {
  const int nq = static_cast<int>(joints_.size());
  for (Eigen::Index col = 0; col < x.cols(); ++col) {
    int r = 0;
    for (int i = 0; i < nq; ++i) {
      const double q = x(i, col);
      if (joints_[static_cast<std::size_t>(i)] == Joint::Revolute) {
        grad_x(i, col) = std::cos(q) * grad_z(r, col) - std::sin(q) * grad_z(r + 1, col);
        r += 2;
      } else {
        grad_x(i, col) = grad_z(r++, col);
      }
    }
    for (int i = 0; i < nq; ++i) grad_x(nq + i, col) = grad_z(r++, col);
  }
}

Eigen::VectorXd reward_coordinates(const SystemSpec& spec, const State& x) {
  if (x.size() != spec.state_dim) throw ContractViolation("reward_coordinates: state has wrong dimension");
  Eigen::VectorXd e = x - spec.x_des;
  for (std::size_t i = 0; i < spec.joints.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    if (spec.joints[i] == Joint::Revolute) e[k] = wrap_angle(e[k]);
  }
  return e;
}

}  // namespace cfvi
