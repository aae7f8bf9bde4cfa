#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include <Eigen/Core>

#include "cfvi/dynamics.hpp"
#include "cfvi/reward.hpp"
#include "cfvi/value_model.hpp"

namespace cfvi {

/// Tabular grid over the pendulum state (theta periodic, theta_dot clamped) with a
/// symmetric action grid.
struct GridSpec {
  int theta_nodes = 101;
  int velocity_nodes = 101;
  double velocity_lo = -8.0;
  double velocity_hi = 8.0;
  int action_levels = 11;
  double action_fraction = 0.999;  // action grid spans +-fraction * u_max
  double dt = 0.01;                 // control period, s
  double gamma = 0.955;             // per control step

  static GridSpec for_system(const SystemSpec& spec, double rho);
  void validate() const;
  double theta_at(int i) const;
  double velocity_at(int j) const;
  double action_at(int a, double u_max) const;
};

struct GridValue {
  GridSpec grid;
  Eigen::MatrixXd values;   // theta_nodes x velocity_nodes
  Eigen::MatrixXd actions;  // greedy action per node
  int sweeps = 0;
  std::vector<double> residuals;  // sup-norm change per sweep

  /// Bilinear interpolation with theta periodicity and clamped velocity.
  double interpolate(double theta, double theta_dot) const;
};

/// Jacobi value iteration V(s) <- max_a [r(s, a) dt + gamma V(step(s, a))] with bilinear
/// interpolation, until the sup-norm change drops below tol. Pendulum only.
/// Throws NonConvergenceError (carrying the last residual) after max_sweeps;
/// `partial`, when given, receives the unconverged table in that case.
GridValue grid_vi(const SystemSpec& spec, const RewardSpec& rs, const GridSpec& gs, double tol, int max_sweeps,
                  const GridValue* warm_start = nullptr, GridValue* partial = nullptr);

/// A converged grid as a ValueModel (bilinear value, piecewise-constant gradient).
class GridValueModel final : public ValueModel {
 public:
  explicit GridValueModel(const GridValue& gv) : gv_(gv) {}
  int state_dim() const override { return 2; }
  void evaluate_batch(const Eigen::Ref<const StateBatch>& x, Eigen::Ref<Eigen::RowVectorXd> values,
                      Eigen::MatrixXd* grad) const override;

 private:
  const GridValue& gv_;
};

/// Finite deterministic-or-stochastic MDP for contraction checks.
struct FiniteMdp {
  int states = 0;
  int actions = 0;
  Eigen::MatrixXd rewards;                     // states x actions
  std::vector<Eigen::MatrixXd> transitions;    // per action: states x states, rows sum to 1

  static FiniteMdp random(int states, int actions, Rng& rng);
};

/// (T V)(s) = max_a [R(s, a) + gamma sum_s' P(s' | s, a) V(s')]
Eigen::VectorXd bellman(const FiniteMdp& mdp, double gamma, const Eigen::VectorXd& v);

/// Plain tabular value iteration to sup-norm tolerance.
Eigen::VectorXd value_iteration(const FiniteMdp& mdp, double gamma, double tol, int max_sweeps);

/// Max over `trials` random pairs of |T Vi - T Vj|_inf / |Vi - Vj|_inf (0 for identical pairs).
double contraction_check(const FiniteMdp& mdp, double gamma, int trials, Rng& rng);
/// Ratio for one explicit pair; 0 when the pair is identical.
double contraction_ratio(const FiniteMdp& mdp, double gamma, const Eigen::VectorXd& vi, const Eigen::VectorXd& vj);

struct ValueComparison {
  double rmse_normalized = 0.0;  // RMSE / std-dev of the grid values
  double rank_correlation = 0.0; // Spearman
  int samples = 0;
};

/// Compares `model` with the grid on the grid nodes, skipping a band of `band` cells at
/// the clamped velocity boundaries and the duplicated periodic theta endpoint.
ValueComparison compare_value(const ValueModel& model, const GridValue& gv, int band = 2);

/// Spearman rank correlation with average ranks for ties.
double spearman(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// CSV with header theta,theta_dot,value,action, one row per node.
void write_grid_csv(std::ostream& os, const GridValue& gv);

}  // namespace cfvi
