#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include <Eigen/Core>

#include "cfvi/dynamics.hpp"
#include "cfvi/reward.hpp"
#include "cfvi/value_model.hpp"

namespace testing_support {

// xdot = u with a = 0 and B = I on an abstract 2-state system.
inline cfvi::SystemSpec linear_toy() {
  cfvi::SystemSpec s;
  s.id = "toy";
  s.state_dim = 2;
  s.action_dim = 2;
  s.joints = {cfvi::Joint::Prismatic};
  s.u_max = Eigen::Vector2d(1.0, 1.0);
  s.x_des = Eigen::Vector2d::Zero();
  s.params = cfvi::CustomDynamics{[](const cfvi::State&) {
    return cfvi::AffineDerivative{Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity()};
  }};
  s.domain_lo = Eigen::Vector2d(-2.0, -2.0);
  s.domain_hi = Eigen::Vector2d(2.0, 2.0);
  return s;
}

// q'' = u
inline cfvi::SystemSpec double_integrator(double u_max = 1.0) {
  cfvi::SystemSpec s;
  s.id = "double_integrator";
  s.state_dim = 2;
  s.action_dim = 1;
  s.joints = {cfvi::Joint::Prismatic};
  s.u_max = Eigen::VectorXd::Constant(1, u_max);
  s.x_des = Eigen::Vector2d::Zero();
  s.params = cfvi::CustomDynamics{[](const cfvi::State& x) {
    Eigen::MatrixXd b(2, 1);
    b << 0.0, 1.0;
    return cfvi::AffineDerivative{Eigen::Vector2d(x[1], 0.0), b};
  }};
  s.domain_lo = Eigen::Vector2d(-1.0, -1.0);
  s.domain_hi = Eigen::Vector2d(1.0, 1.0);
  return s;
}

inline cfvi::RewardSpec reward_for(const cfvi::SystemSpec& s, double q = 1.0, double beta = 0.5) {
  cfvi::RewardSpec rs;
  rs.q_diag = Eigen::VectorXd::Constant(s.state_dim, q);
  rs.action_cost_beta = beta;
  rs.u_max = s.u_max;
  rs.goal = Eigen::VectorXd::Zero(s.state_dim);
  return rs;
}

// V(x) = -x^T W x on raw coordinates
class QuadraticValue final : public cfvi::ValueModel {
 public:
  explicit QuadraticValue(Eigen::MatrixXd w) : w_(std::move(w)) {}
  int state_dim() const override { return static_cast<int>(w_.rows()); }
  void evaluate_batch(const Eigen::Ref<const cfvi::StateBatch>& x, Eigen::Ref<Eigen::RowVectorXd> values,
                      Eigen::MatrixXd* grad) const override {
    const Eigen::MatrixXd wx = w_ * x;
    values = -(x.array() * wx.array()).colwise().sum().matrix();
    if (grad) *grad = -(w_ + w_.transpose()) * x;
  }

 private:
  Eigen::MatrixXd w_;
};

class ConstantValue final : public cfvi::ValueModel {
 public:
  ConstantValue(int dim, double c) : dim_(dim), c_(c) {}
  int state_dim() const override { return dim_; }
  void evaluate_batch(const Eigen::Ref<const cfvi::StateBatch>& x, Eigen::Ref<Eigen::RowVectorXd> values,
                      Eigen::MatrixXd* grad) const override {
    values.setConstant(c_);
    if (grad) grad->setZero(dim_, x.cols());
  }

 private:
  int dim_;
  double c_;
};

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("cfvi_test_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_support
