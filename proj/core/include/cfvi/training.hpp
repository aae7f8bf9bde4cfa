#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "cfvi/dynamics.hpp"
#include "cfvi/evaluation.hpp"
#include "cfvi/features.hpp"
#include "cfvi/hjb.hpp"
#include "cfvi/reward.hpp"
#include "cfvi/value_ensemble.hpp"

namespace cfvi {

enum class TrainMode { DP, RTDP };

TrainMode parse_mode(std::string_view name);
std::string to_string(TrainMode mode);

struct TrainConfig {
  TrainMode mode = TrainMode::DP;
  int iterations = 150;
  int dataset_size = 20000;     // DP
  int buffer_capacity = 20000;  // RTDP
  int rollouts_per_iter = 10;   // RTDP
  int episode_steps = 200;      // RTDP, control steps per exploratory episode
  double exploration_noise = 0.1;  // RTDP, std of the noise on w as a fraction of u_max
  double max_invalid_fraction = 0.1;
  int eval_every = 10;
  int eval_rollouts = 20;
  /// Stop at the first evaluation point with at least this success rate; 0 disables.
  double stop_success_rate = 0.0;
  std::uint64_t seed = 0;
  TargetConfig target;
  FitConfig fit;
  EnsembleConfig ensemble;
  EvalProtocol eval;  // protocol of the evaluation points (n_rollouts is taken from eval_rollouts)

  void validate() const;
};

/// FIFO state buffer; pushing beyond capacity evicts the oldest states first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity, int state_dim);

  void push(const State& x);
  void push_batch(const Eigen::Ref<const StateBatch>& x);
  int size() const { return static_cast<int>(states_.size()); }
  int capacity() const { return capacity_; }
  /// Oldest state first.
  StateBatch states() const;

 private:
  int capacity_;
  int state_dim_;
  std::deque<State> states_;
};

struct CurvePoint {
  int iteration = 0;
  double mean_reward = 0.0;
  double min_reward = 0.0;
  double max_reward = 0.0;
  double success_rate = 0.0;
  double fit_loss = 0.0;
  double seconds = 0.0;  // wall time since the start of training
};

struct LearningCurve {
  std::vector<CurvePoint> points;

  /// First evaluated iteration whose success rate reaches `rate`, or -1.
  int iterations_to_success(double rate) const;
};

/// Header and rows of the learning-curve CSV. With `with_time` false the wall-time
/// column is left out, so that reruns produce identical files.
void write_curve_header(std::ostream& os, bool with_time = true);
void write_curve_row(std::ostream& os, const CurvePoint& p, bool with_time = true);

struct IterationReport {
  int iteration = 0;  // 1-based count of completed iterations
  int invalid_targets = 0;
  int samples = 0;
  double fit_loss = 0.0;
  double target_seconds = 0.0;
  double fit_seconds = 0.0;
  const CurvePoint* evaluation = nullptr;  // set on evaluation iterations
};

/// Observers of the training loop. All callbacks are optional and run on the
/// training thread between phases.
struct TrainHooks {
  std::function<void(const IterationReport&, const ValueEnsemble&, const ReplayBuffer*)> on_iteration;
  /// Called with the ensemble as it was before the failing iteration, before the
  /// DivergenceError propagates.
  std::function<void(int iteration, const ValueEnsemble&, const std::string& reason)> on_abort;
};

struct TrainResult {
  ValueEnsemble ensemble;
  LearningCurve curve;
  int iterations = 0;
};

/// Resumable state of a run: completed iteration count, ensemble, RTDP buffer.
struct TrainState {
  int iteration = 0;
  ValueEnsemble ensemble;
  StateBatch buffer;  // RTDP only; oldest first
};

/// DP cFVI: a fixed uniform dataset, targets and fit over all of it each iteration.
TrainResult train_dp(const TrainConfig& cfg, const SystemSpec& spec, const RewardSpec& rs,
                     const FeatureTransform& ft, const TrainHooks& hooks = {}, const TrainState* resume = nullptr);
/// RTDP cFVI: exploratory on-policy rollouts feed a FIFO buffer that replaces the data.
TrainResult train_rtdp(const TrainConfig& cfg, const SystemSpec& spec, const RewardSpec& rs,
                       const FeatureTransform& ft, const TrainHooks& hooks = {}, const TrainState* resume = nullptr);
/// Dispatches on cfg.mode.
TrainResult train(const TrainConfig& cfg, const SystemSpec& spec, const RewardSpec& rs, const FeatureTransform& ft,
                  const TrainHooks& hooks = {}, const TrainState* resume = nullptr);

/// Exploratory episodes from `starts` under the greedy policy with Gaussian noise of std
/// noise * u_max added to w = B^T dV/dx. Returns the visited states episode by episode;
/// an episode that blows up ends at its last finite state.
StateBatch exploration_rollouts(const ValueModel& value, const RewardSpec& rs, const SystemSpec& spec,
                                const Eigen::Ref<const StateBatch>& starts, int steps, double noise, Rng& rng);

/// The fixed DP dataset of a configuration.
StateBatch dp_dataset(const TrainConfig& cfg, const SystemSpec& spec);

/// FNV-1a over the raw bytes of a state batch.
std::uint64_t hash_states(const Eigen::Ref<const StateBatch>& x);

}  // namespace cfvi
