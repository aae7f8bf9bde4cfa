#pragma once

#include <Eigen/Core>

#include "cfvi/types.hpp"

namespace cfvi {

struct ValueAndGradient {
  double value = 0.0;
  Eigen::VectorXd grad_x;
};

/// Anything that yields V(x) and dV/dx over raw states. Implementations must be
/// safe for concurrent const calls.
class ValueModel {
 public:
  virtual ~ValueModel() = default;

  virtual int state_dim() const = 0;

  /// values(j) = V(x_j); if grad != nullptr it is resized to state_dim x cols with dV/dx.
  virtual void evaluate_batch(const Eigen::Ref<const StateBatch>& x, Eigen::Ref<Eigen::RowVectorXd> values,
                              Eigen::MatrixXd* grad) const = 0;

  ValueAndGradient evaluate(const State& x) const {
    Eigen::RowVectorXd v(1);
    Eigen::MatrixXd g;
    evaluate_batch(x, v, &g);
    return {v[0], g.col(0)};
  }

  double value(const State& x) const {
    Eigen::RowVectorXd v(1);
    evaluate_batch(x, v, nullptr);
    return v[0];
  }
};

}  // namespace cfvi
