#include "cfvi/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <json.hpp>

#include "cfvi/errors.hpp"
#include "cfvi/features.hpp"
#include "cfvi/hjb.hpp"

namespace cfvi {

namespace {

// Neumaier summation, so the statistics do not depend on reduction order beyond 1e-12.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace

InitDistribution parse_init(std::string_view name) {
  if (name == "downward") return InitDistribution::Downward;
  if (name == "uniform") return InitDistribution::UniformAngle;
  throw ConfigError("unknown initial distribution '" + std::string(name) + "' (expected downward | uniform)");
}

std::string to_string(InitDistribution init) {
  return init == InitDistribution::Downward ? "downward" : "uniform";
}

void EvalProtocol::validate() const {
  if (n_rollouts < 1) throw ConfigError("eval.n_rollouts must be >= 1");
  if (!(success_window > 0.0)) throw ConfigError("eval.success_window must be positive");
  if (!(duration >= success_window)) throw ConfigError("eval.duration must be >= eval.success_window");
  if (!(success_angle > 0.0)) throw ConfigError("eval.success_angle must be positive");
  if (!(init_jitter >= 0.0)) throw ConfigError("eval.init_jitter must be >= 0");
  if (!(rho >= 0.0)) throw ConfigError("eval.rho must be >= 0");
}

StateBatch initial_states(const SystemSpec& spec, const EvalProtocol& ep, std::uint64_t seed) {
  Rng rng = make_rng(seed, "eval");
  std::normal_distribution<double> jitter(0.0, 1.0);
  std::uniform_real_distribution<double> angle(-kPi, kPi);
  StateBatch x(spec.state_dim, ep.n_rollouts);
  for (int j = 0; j < ep.n_rollouts; ++j) {
    x.col(j) = spec.x_des;
    double& theta = x(spec.pendulum_index, j);
    if (ep.init == InitDistribution::Downward) {
      theta = wrap_angle(kPi + ep.init_jitter * jitter(rng));
    } else {
      theta = wrap_angle(angle(rng));
    }
  }
  return x;
}

EvalResult evaluate_policy(const ValueModel& value, const RewardSpec& rs, const SystemSpec& spec,
                           const EvalProtocol& ep, std::uint64_t seed, bool keep_traces) {
  ep.validate();
  return evaluate_from(value, rs, spec, ep, initial_states(spec, ep, seed), keep_traces);
}

EvalResult evaluate_from(const ValueModel& value, const RewardSpec& rs, const SystemSpec& spec,
                         const EvalProtocol& ep, const Eigen::Ref<const StateBatch>& starts, bool keep_traces) {
  ep.validate();
  if (starts.rows() != spec.state_dim || starts.cols() < 1)
    throw ContractViolation("evaluate_from: starts must be state_dim x n with n >= 1");
  const double dt = spec.control_dt();
  const int steps = static_cast<int>(std::llround(ep.duration / dt));
  const double gamma = std::exp(-ep.rho * dt);
  const auto n = static_cast<int>(starts.cols());

  StateBatch x = starts;
  std::vector<RolloutTrace> traces(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    auto& tr = traces[static_cast<std::size_t>(j)];
    tr.dt = dt;
    tr.pendulum_index = spec.pendulum_index;
    tr.states.resize(spec.state_dim, steps + 1);
    tr.actions.resize(spec.action_dim, steps);
    tr.reward_rates.resize(steps);
    tr.states.col(0) = x.col(j);
  }
  std::vector<int> length(static_cast<std::size_t>(n), steps);  // control steps completed
  std::vector<char> alive(static_cast<std::size_t>(n), 1);
  std::vector<CompensatedSum> ret(static_cast<std::size_t>(n));

  double discount = 1.0;
  for (int t = 0; t < steps; ++t) {
    const ActionBatch u = policy_batch(value, rs, spec, x);
    for (int j = 0; j < n; ++j) {
      const auto k = static_cast<std::size_t>(j);
      if (!alive[k]) continue;
      auto& tr = traces[k];
      const State xj = x.col(j);
      auto col = x.col(j);
      if (!control_step_inplace(spec, col, u.col(j))) {
        // the failed step is not recorded; the episode ends here
        alive[k] = 0;
        tr.blowup = true;
        length[k] = t;
        col = spec.x_des;
        continue;
      }
      const double r = reward(rs, reward_coordinates(spec, xj), u.col(j));
      tr.actions.col(t) = u.col(j);
      tr.reward_rates[t] = r;
      ret[k].add(discount * r * dt);
      tr.states.col(t + 1) = col;
    }
    discount *= gamma;
  }

  EvalResult res;
  res.rewards.resize(static_cast<std::size_t>(n));
  CompensatedSum mean_sum;
  int successes = 0;
  for (int j = 0; j < n; ++j) {
    const auto k = static_cast<std::size_t>(j);
    auto& tr = traces[k];
    if (tr.blowup) {
      const int len = length[k];
      tr.states.conservativeResize(Eigen::NoChange, len + 1);
      tr.actions.conservativeResize(Eigen::NoChange, len);
      tr.reward_rates.conservativeResize(len);
    }
    tr.times = Eigen::VectorXd::LinSpaced(tr.states.cols(), 0.0, dt * static_cast<double>(tr.states.cols() - 1));
    tr.cumulative_reward = ret[k].value();
    tr.success = !tr.blowup && success(tr, ep);
    successes += tr.success ? 1 : 0;
    res.blowups += tr.blowup ? 1 : 0;
    res.rewards[k] = tr.cumulative_reward;
    mean_sum.add(tr.cumulative_reward);
  }
  res.success_rate = static_cast<double>(successes) / n;
  res.reward_mean = mean_sum.value() / n;
  CompensatedSum var_sum;
  for (const double r : res.rewards) var_sum.add((r - res.reward_mean) * (r - res.reward_mean));
  res.reward_ci95 = n > 1 ? 1.96 * std::sqrt(var_sum.value() / (n - 1)) : 0.0;
  res.reward_min = *std::min_element(res.rewards.begin(), res.rewards.end());
  res.reward_max = *std::max_element(res.rewards.begin(), res.rewards.end());
  if (keep_traces) res.traces = std::move(traces);
  return res;
}

bool success(const RolloutTrace& trace, const EvalProtocol& ep) {
  const Eigen::Index samples = trace.states.cols();
  if (samples == 0 || trace.times.size() != samples) throw ContractViolation("success: malformed trace");
  const double end = trace.times[samples - 1];
  if (end + 1e-9 < ep.success_window) throw ContractViolation("success: trace shorter than the success window");
  const double start = end - ep.success_window - 1e-9;
  for (Eigen::Index k = samples - 1; k >= 0 && trace.times[k] >= start; --k) {
    if (!(std::abs(wrap_angle(trace.states(trace.pendulum_index, k))) < ep.success_angle)) return false;
  }
  return true;
}

void write_trace_csv(std::ostream& os, const RolloutTrace& trace) {
  const auto precision = os.precision(std::numeric_limits<double>::max_digits10);
  os << 't';
  for (Eigen::Index i = 0; i < trace.states.rows(); ++i) os << ",x" << i;
  for (Eigen::Index i = 0; i < trace.actions.rows(); ++i) os << ",u" << i;
  os << ",reward\n";
  for (Eigen::Index k = 0; k < trace.states.cols(); ++k) {
    os << trace.times[k];
    for (Eigen::Index i = 0; i < trace.states.rows(); ++i) os << ',' << trace.states(i, k);
    if (k < trace.actions.cols()) {
      for (Eigen::Index i = 0; i < trace.actions.rows(); ++i) os << ',' << trace.actions(i, k);
      os << ',' << trace.reward_rates[k];
    } else {
      for (Eigen::Index i = 0; i < trace.actions.rows(); ++i) os << ',';
      os << ',';
    }
    os << '\n';
  }
  os.precision(precision);
}

void write_summary_json(std::ostream& os, const EvalResult& result) {
  nlohmann::json j;
  j["success_rate"] = result.success_rate;
  j["mean"] = result.reward_mean;
  j["ci95"] = result.reward_ci95;
  j["min"] = result.reward_min;
  j["max"] = result.reward_max;
  j["n_rollouts"] = result.rewards.size();
  j["blowups"] = result.blowups;
  os << j.dump(2) << '\n';
}

}  // namespace cfvi
