#include "cfvi/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>
#include <ostream>
#include <sstream>

#include "cfvi/errors.hpp"

namespace cfvi {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Guards the read-only target phase against overlapping with a fit.
class PhaseFlag {
 public:
  enum Phase { Idle, Targets, Fit };

  class Scope {
   public:
    Scope(PhaseFlag& flag, Phase p) : flag_(flag) {
      if (flag_.phase_ != Idle) throw ContractViolation("training phases overlap");
      flag_.phase_ = p;
    }
    ~Scope() { flag_.phase_ = Idle; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    PhaseFlag& flag_;
  };

 private:
  Phase phase_ = Idle;
};

struct FitOutcome {
  int invalid = 0;
  double loss = 0.0;
  double target_seconds = 0.0;
  double fit_seconds = 0.0;
};

// One cFVI iteration on `data`: frozen targets, then fit over the valid ones.
FitOutcome iterate(ValueEnsemble& ve, const TrainConfig& cfg, const SystemSpec& spec, const RewardSpec& rs,
                   const FeatureTransform& ft, const StateBatch& data, int k, PhaseFlag& phase,
                   const TrainHooks& hooks) {
  FitOutcome out;
  TargetBatch tb;
  auto t0 = Clock::now();
  {
    PhaseFlag::Scope scope(phase, PhaseFlag::Targets);
    const EnsembleValue value(ve, ft);
    tb = n_step_targets(value, rs, spec, cfg.target, data);
  }
  out.target_seconds = seconds_since(t0);
  out.invalid = tb.invalid_count;
  const double fraction = static_cast<double>(tb.invalid_count) / static_cast<double>(data.cols());
  if (fraction > cfg.max_invalid_fraction) {
    std::ostringstream os;
    os << "iteration " << k + 1 << ": " << tb.invalid_count << " of " << data.cols()
       << " targets invalid (diverging rollouts), above the limit of " << cfg.max_invalid_fraction;
    if (hooks.on_abort) hooks.on_abort(k, ve, os.str());
    throw DivergenceError(os.str());
  }
  StateBatch states = data;
  Eigen::VectorXd targets = tb.targets;
  if (tb.invalid_count > 0) {
    const Eigen::Index keep = data.cols() - tb.invalid_count;
    states.resize(data.rows(), keep);
    targets.resize(keep);
    Eigen::Index j = 0;
    for (Eigen::Index i = 0; i < data.cols(); ++i) {
      if (!tb.valid[static_cast<std::size_t>(i)]) continue;
      states.col(j) = data.col(i);
      targets[j] = tb.targets[i];
      ++j;
    }
  }
  t0 = Clock::now();
  FitResult fr;
  {
    PhaseFlag::Scope scope(phase, PhaseFlag::Fit);
    const std::uint64_t fit_seed = make_rng(cfg.seed, "fit" + std::to_string(k))();
    const ValueEnsemble before = hooks.on_abort ? ve : ValueEnsemble{};
    try {
      fr = ve.fit(ft, states, targets, cfg.fit, fit_seed);
    } catch (const DivergenceError& e) {
      if (hooks.on_abort) hooks.on_abort(k, before, e.what());
      throw;
    }
  }
  out.fit_seconds = seconds_since(t0);
  for (const double l : fr.final_loss) out.loss += l;
  out.loss /= static_cast<double>(fr.final_loss.size());
  return out;
}

bool is_eval_iteration(const TrainConfig& cfg, int completed) {
  return cfg.eval_every > 0 && (completed % cfg.eval_every == 0 || completed == cfg.iterations);
}

CurvePoint evaluate_point(const ValueEnsemble& ve, const TrainConfig& cfg, const SystemSpec& spec,
                          const RewardSpec& rs, const FeatureTransform& ft, int completed, double loss,
                          double seconds) {
  EvalProtocol ep = cfg.eval;
  ep.n_rollouts = cfg.eval_rollouts;
  ep.rho = cfg.target.rho;
  const EvalResult er = evaluate_policy(EnsembleValue(ve, ft), rs, spec, ep, cfg.seed, false);
  CurvePoint p;
  p.iteration = completed;
  p.mean_reward = er.reward_mean;
  p.min_reward = er.reward_min;
  p.max_reward = er.reward_max;
  p.success_rate = er.success_rate;
  p.fit_loss = loss;
  p.seconds = seconds;
  return p;
}

ValueEnsemble initial_ensemble(const TrainConfig& cfg, const FeatureTransform& ft) {
  return ValueEnsemble(ft.feature_dim(), cfg.ensemble, make_rng(cfg.seed, "init")());
}

bool reached_stop(const TrainConfig& cfg, const IterationReport& rep) {
  return cfg.stop_success_rate > 0.0 && rep.evaluation && rep.evaluation->success_rate >= cfg.stop_success_rate;
}

StateBatch explore(const ValueEnsemble& ve, const TrainConfig& cfg, const SystemSpec& spec, const RewardSpec& rs,
                   const FeatureTransform& ft, int k) {
  Rng rng = make_rng(cfg.seed, "noise" + std::to_string(k));
  const StateBatch starts = sample_domain(spec, cfg.rollouts_per_iter, rng);
  return exploration_rollouts(EnsembleValue(ve, ft), rs, spec, starts, cfg.episode_steps, cfg.exploration_noise, rng);
}

}  // namespace

StateBatch exploration_rollouts(const ValueModel& value, const RewardSpec& rs, const SystemSpec& spec,
                                const Eigen::Ref<const StateBatch>& starts, int steps, double noise, Rng& rng) {
  if (starts.rows() != spec.state_dim || starts.cols() < 1)
    throw ContractViolation("exploration_rollouts: starts must be state_dim x n with n >= 1");
  if (steps < 1 || !(noise >= 0.0)) throw ContractViolation("exploration_rollouts: steps >= 1 and noise >= 0 required");
  StateBatch x = starts;
  const auto n = static_cast<int>(starts.cols());
  std::vector<StateBatch> visited(static_cast<std::size_t>(n), StateBatch(spec.state_dim, steps));
  std::vector<int> length(static_cast<std::size_t>(n), steps);
  std::vector<char> alive(static_cast<std::size_t>(n), 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::RowVectorXd v(n);
  Eigen::MatrixXd grad;
  for (int t = 0; t < steps; ++t) {
    value.evaluate_batch(x, v, &grad);
    Eigen::MatrixXd w = project_on_controls(spec, x, grad);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) += noise * spec.u_max[i] * normal(rng);
    for (int j = 0; j < n; ++j) {
      const auto e = static_cast<std::size_t>(j);
      if (!alive[e]) continue;
      visited[e].col(t) = x.col(j);
      auto col = x.col(j);
      const Action u = conjugate_gradient(rs, w.col(j));
      if (!control_step_inplace(spec, col, u)) {
        alive[e] = 0;
        length[e] = t + 1;
        col = spec.x_des;
      }
    }
  }
  int total = 0;
  for (const int l : length) total += l;
  StateBatch out(spec.state_dim, total);
  Eigen::Index c = 0;
  for (int j = 0; j < n; ++j) {
    const auto e = static_cast<std::size_t>(j);
    out.middleCols(c, length[e]) = visited[e].leftCols(length[e]);
    c += length[e];
  }
  return out;
}

TrainMode parse_mode(std::string_view name) {
  if (name == "dp" || name == "DP") return TrainMode::DP;
  if (name == "rtdp" || name == "RTDP") return TrainMode::RTDP;
  throw ConfigError("unknown mode '" + std::string(name) + "' (expected dp | rtdp)");
}

std::string to_string(TrainMode mode) { return mode == TrainMode::DP ? "dp" : "rtdp"; }

void TrainConfig::validate() const {
  if (iterations < 0) throw ConfigError("train.iterations must be >= 0");
  if (mode == TrainMode::DP && dataset_size < 1) throw ConfigError("train.dataset_size must be >= 1");
  if (mode == TrainMode::RTDP) {
    if (buffer_capacity < 1) throw ConfigError("train.buffer_capacity must be >= 1");
    if (rollouts_per_iter < 1) throw ConfigError("train.rollouts_per_iter must be >= 1");
    if (episode_steps < 1) throw ConfigError("train.episode_steps must be >= 1");
    if (!(exploration_noise >= 0.0)) throw ConfigError("train.exploration_noise must be >= 0");
  }
  if (!(max_invalid_fraction >= 0.0 && max_invalid_fraction <= 1.0))
    throw ConfigError("train.max_invalid_fraction must be in [0, 1]");
  if (eval_every < 0) throw ConfigError("train.eval_every must be >= 0");
  if (eval_rollouts < 1) throw ConfigError("train.eval_rollouts must be >= 1");
  if (!(stop_success_rate >= 0.0 && stop_success_rate <= 1.0))
    throw ConfigError("train.stop_success_rate must be in [0, 1]");
  if (fit.epochs < 0) throw ConfigError("fit.epochs must be >= 0");
  if (fit.minibatch < 1) throw ConfigError("fit.minibatch must be >= 1");
  if (!(fit.learning_rate > 0.0)) throw ConfigError("fit.learning_rate must be positive");
  if (ensemble.members < 1) throw ConfigError("ensemble.members must be >= 1");
  if (ensemble.hidden.empty()) throw ConfigError("ensemble.hidden needs at least one layer");
  for (const int h : ensemble.hidden)
    if (h < 1) throw ConfigError("ensemble.hidden sizes must be positive");
  if (!is_smooth(ensemble.activation)) throw ConfigError("ensemble.activation must be smooth");
  if (!(ensemble.diag_floor > 0.0)) throw ConfigError("ensemble.diag_floor must be positive");
  target.validate();
  eval.validate();
}

ReplayBuffer::ReplayBuffer(int capacity, int state_dim) : capacity_(capacity), state_dim_(state_dim) {
  if (capacity < 1) throw ContractViolation("ReplayBuffer: capacity must be >= 1");
}

void ReplayBuffer::push(const State& x) {
  if (x.size() != state_dim_) throw ContractViolation("ReplayBuffer: state has wrong dimension");
  if (static_cast<int>(states_.size()) == capacity_) states_.pop_front();
  states_.push_back(x);
}

void ReplayBuffer::push_batch(const Eigen::Ref<const StateBatch>& x) {
  for (Eigen::Index j = 0; j < x.cols(); ++j) push(State(x.col(j)));
}

StateBatch ReplayBuffer::states() const {
  StateBatch out(state_dim_, static_cast<Eigen::Index>(states_.size()));
  Eigen::Index j = 0;
  for (const auto& s : states_) out.col(j++) = s;
  return out;
}

int LearningCurve::iterations_to_success(double rate) const {
  for (const auto& p : points)
    if (p.success_rate >= rate) return p.iteration;
  return -1;
}

void write_curve_header(std::ostream& os, bool with_time) {
  os << "iteration,mean_reward,min_reward,max_reward,success_rate,fit_loss";
  if (with_time) os << ",seconds";
  os << '\n';
}

void write_curve_row(std::ostream& os, const CurvePoint& p, bool with_time) {
  const auto precision = os.precision(std::numeric_limits<double>::max_digits10);
  os << p.iteration << ',' << p.mean_reward << ',' << p.min_reward << ',' << p.max_reward << ',' << p.success_rate
     << ',' << p.fit_loss;
  if (with_time) os << ',' << p.seconds;
  os << '\n';
  os.precision(precision);
}

std::uint64_t hash_states(const Eigen::Ref<const StateBatch>& x) {
  std::uint64_t h = 1469598103934665603ULL;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double v = x(i, j);
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (const unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

StateBatch dp_dataset(const TrainConfig& cfg, const SystemSpec& spec) {
  Rng rng = make_rng(cfg.seed, "dataset");
  return sample_domain(spec, cfg.dataset_size, rng);
}

TrainResult train_dp(const TrainConfig& cfg, const SystemSpec& spec, const RewardSpec& rs,
                     const FeatureTransform& ft, const TrainHooks& hooks, const TrainState* resume) {
  if (cfg.mode != TrainMode::DP) throw ContractViolation("train_dp: mode must be DP");
  cfg.validate();
  const auto t0 = Clock::now();
  TrainResult res;
  res.ensemble = resume ? resume->ensemble : initial_ensemble(cfg, ft);
  const int start = resume ? resume->iteration : 0;
  res.iterations = start;
  const StateBatch data = dp_dataset(cfg, spec);
  const std::uint64_t data_hash = hash_states(data);
  PhaseFlag phase;
  for (int k = start; k < cfg.iterations; ++k) {
    if (hash_states(data) != data_hash) throw ContractViolation("DP dataset changed between iterations");
    const FitOutcome fo = iterate(res.ensemble, cfg, spec, rs, ft, data, k, phase, hooks);
    res.iterations = k + 1;
    IterationReport rep{k + 1, fo.invalid, static_cast<int>(data.cols()), fo.loss, fo.target_seconds, fo.fit_seconds};
    if (is_eval_iteration(cfg, k + 1)) {
      res.curve.points.push_back(evaluate_point(res.ensemble, cfg, spec, rs, ft, k + 1, fo.loss, seconds_since(t0)));
      rep.evaluation = &res.curve.points.back();
    }
    if (hooks.on_iteration) hooks.on_iteration(rep, res.ensemble, nullptr);
    if (reached_stop(cfg, rep)) break;
  }
  return res;
}

TrainResult train_rtdp(const TrainConfig& cfg, const SystemSpec& spec, const RewardSpec& rs,
                       const FeatureTransform& ft, const TrainHooks& hooks, const TrainState* resume) {
  if (cfg.mode != TrainMode::RTDP) throw ContractViolation("train_rtdp: mode must be RTDP");
  cfg.validate();
  const auto t0 = Clock::now();
  TrainResult res;
  res.ensemble = resume ? resume->ensemble : initial_ensemble(cfg, ft);
  const int start = resume ? resume->iteration : 0;
  res.iterations = start;
  ReplayBuffer buffer(cfg.buffer_capacity, spec.state_dim);
  if (resume && resume->buffer.cols() > 0) {
    buffer.push_batch(resume->buffer);
  } else {
    Rng rng = make_rng(cfg.seed, "dataset");
    buffer.push_batch(sample_domain(spec, cfg.buffer_capacity, rng));
  }
  PhaseFlag phase;
  for (int k = start; k < cfg.iterations; ++k) {
    buffer.push_batch(explore(res.ensemble, cfg, spec, rs, ft, k));
    const StateBatch data = buffer.states();
    const FitOutcome fo = iterate(res.ensemble, cfg, spec, rs, ft, data, k, phase, hooks);
    res.iterations = k + 1;
    IterationReport rep{k + 1, fo.invalid, static_cast<int>(data.cols()), fo.loss, fo.target_seconds, fo.fit_seconds};
    if (is_eval_iteration(cfg, k + 1)) {
      res.curve.points.push_back(evaluate_point(res.ensemble, cfg, spec, rs, ft, k + 1, fo.loss, seconds_since(t0)));
      rep.evaluation = &res.curve.points.back();
    }
    if (hooks.on_iteration) hooks.on_iteration(rep, res.ensemble, &buffer);
    if (reached_stop(cfg, rep)) break;
  }
  return res;
}

TrainResult train(const TrainConfig& cfg, const SystemSpec& spec, const RewardSpec& rs, const FeatureTransform& ft,
                  const TrainHooks& hooks, const TrainState* resume) {
  return cfg.mode == TrainMode::DP ? train_dp(cfg, spec, rs, ft, hooks, resume)
                                   : train_rtdp(cfg, spec, rs, ft, hooks, resume);
}

}  // namespace cfvi
