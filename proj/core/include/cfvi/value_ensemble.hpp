#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "cfvi/features.hpp"
#include "cfvi/network.hpp"
#include "cfvi/value_model.hpp"

namespace cfvi {

struct EnsembleConfig {
  std::vector<int> hidden{128, 128};
  Activation activation = Activation::Tanh;
  int members = 4;
  double diag_floor = 1e-3;
};

/// Member: every network regresses its own value -(e^T L_i L_i^T e).
/// Ensemble: the networks are trained jointly on the value of the mean factor, which is
/// the function evaluate() returns.
enum class FitObjective { Member, Ensemble };

FitObjective parse_fit_objective(std::string_view name);
std::string to_string(FitObjective objective);

struct FitConfig {
  FitObjective objective = FitObjective::Member;
  int epochs = 20;
  int minibatch = 256;
  double learning_rate = 1e-3;
  /// Allowed epoch-to-epoch increase of the mean loss before the trace counts as non-monotone.
  double loss_tolerance = 0.05;
};

struct FitResult {
  /// Mean minibatch loss per epoch, averaged over members.
  std::vector<double> epoch_loss;
  /// Full-dataset loss of every member before and after fitting; a single entry, the
  /// ensemble loss, for FitObjective::Ensemble.
  std::vector<double> initial_loss;
  std::vector<double> final_loss;
};

/// Locally quadratic value function
///   V(x) = -(z - z_des)^T Lbar(z) Lbar(z)^T (z - z_des),  z = h(x),
/// where Lbar is the mean over N networks of a lower-triangular matrix with
/// softplus(.) + diag_floor on the diagonal. V <= 0, V(x_des) = 0 and
/// dV/dx(x_des) = 0 hold for every parameter setting.
///
/// Each member network maps z to the d(d+1)/2 lower-triangular entries in row-major order.
class ValueEnsemble {
 public:
  ValueEnsemble() = default;
  /// Independently seeded members; throws ConfigError for non-smooth activations.
  ValueEnsemble(int feature_dim, const EnsembleConfig& cfg, std::uint64_t seed);
  /// From existing member networks (checkpoint restore).
  ValueEnsemble(int feature_dim, const EnsembleConfig& cfg, std::vector<Mlp> members);

  int feature_dim() const { return dim_; }
  int members() const { return static_cast<int>(nets_.size()); }
  const EnsembleConfig& config() const { return cfg_; }
  const NetworkArch& arch() const { return nets_.front().arch(); }
  const std::vector<Mlp>& networks() const { return nets_; }
  std::vector<Mlp>& networks() { return nets_; }

  /// Ensemble evaluation over raw states; grad may be nullptr.
  void evaluate_batch(const FeatureTransform& ft, const Eigen::Ref<const StateBatch>& x,
                      Eigen::Ref<Eigen::RowVectorXd> values, Eigen::MatrixXd* grad) const;
  ValueAndGradient evaluate(const FeatureTransform& ft, const State& x) const;

  /// Value of a single member (what fit() regresses).
  void member_values(int member, const FeatureTransform& ft, const Eigen::Ref<const StateBatch>& x,
                     Eigen::Ref<Eigen::RowVectorXd> values) const;

  /// Lower-triangular factor of one member, or the ensemble mean when member < 0.
  Eigen::MatrixXd lower_factor(const FeatureTransform& ft, const State& x, int member = -1) const;

  /// Squared-loss regression onto targets with Adam (one optimizer per member).
  /// Throws DivergenceError (with the minibatch index) on a non-finite loss.
  FitResult fit(const FeatureTransform& ft, const Eigen::Ref<const StateBatch>& states,
                const Eigen::Ref<const Eigen::VectorXd>& targets, const FitConfig& cfg, std::uint64_t seed);

 private:
  FitResult fit_joint(const Eigen::Ref<const Eigen::MatrixXd>& z_all, const Eigen::Ref<const Eigen::MatrixXd>& e_all,
                      const Eigen::Ref<const Eigen::VectorXd>& targets, const FitConfig& cfg, std::uint64_t seed,
                      const std::function<double()>& full_loss);
  void member_factor(int member, const Eigen::Ref<const Eigen::MatrixXd>& z, ForwardCache& cache,
                     Eigen::MatrixXd& factor) const;

  int dim_ = 0;
  EnsembleConfig cfg_;
  std::vector<Mlp> nets_;
  std::vector<int> row_;  // lower-triangular entry k sits at (row_[k], col_[k])
  std::vector<int> col_;
  std::vector<int> diag_;  // entry indices of the diagonal
};

/// ValueModel view of an ensemble bound to a feature transform.
class EnsembleValue final : public ValueModel {
 public:
  EnsembleValue(const ValueEnsemble& ve, const FeatureTransform& ft) : ve_(ve), ft_(ft) {}
  int state_dim() const override { return ft_.state_dim(); }
  void evaluate_batch(const Eigen::Ref<const StateBatch>& x, Eigen::Ref<Eigen::RowVectorXd> values,
                      Eigen::MatrixXd* grad) const override {
    ve_.evaluate_batch(ft_, x, values, grad);
  }

 private:
  const ValueEnsemble& ve_;
  const FeatureTransform& ft_;
};

}  // namespace cfvi
