#include "cfvi/oracle.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "cfvi/errors.hpp"
#include "cfvi/features.hpp"
#include "cfvi/parallel.hpp"

namespace cfvi {

GridSpec GridSpec::for_system(const SystemSpec& spec, double rho) {
  if (spec.state_dim != 2) throw ContractViolation("grid oracle supports the 2-D pendulum only");
  GridSpec gs;
  gs.velocity_lo = spec.domain_lo[1];
  gs.velocity_hi = spec.domain_hi[1];
  gs.dt = spec.control_dt();
  gs.gamma = std::exp(-rho * gs.dt);
  return gs;
}

void GridSpec::validate() const {
  if (theta_nodes < 51 || velocity_nodes < 51) throw ConfigError("oracle grid needs >= 51 nodes per dimension");
  if (!(velocity_lo < velocity_hi)) throw ConfigError("oracle velocity bounds must be increasing");
  if (action_levels < 2) throw ConfigError("oracle needs >= 2 action levels");
  if (!(action_fraction > 0.0 && action_fraction < 1.0)) throw ConfigError("oracle action_fraction must be in (0, 1)");
  if (!(dt > 0.0)) throw ConfigError("oracle dt must be positive");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("oracle gamma must be in [0, 1)");
}

double GridSpec::theta_at(int i) const { return -kPi + 2.0 * kPi * i / (theta_nodes - 1); }

double GridSpec::velocity_at(int j) const {
  return velocity_lo + (velocity_hi - velocity_lo) * j / (velocity_nodes - 1);
}

double GridSpec::action_at(int a, double u_max) const {
  const double bound = action_fraction * u_max;
  return -bound + 2.0 * bound * a / (action_levels - 1);
}

namespace {

struct Stencil {
  std::array<int, 4> node{};  // flattened indices i + nt * j
  std::array<double, 4> weight{};
  // cell coordinates for gradients
  int i0 = 0, j0 = 0;
  double ft = 0.0, fv = 0.0;
};

Stencil locate(const GridSpec& gs, double theta, double theta_dot) {
  const double ht = 2.0 * kPi / (gs.theta_nodes - 1);
  const double hv = (gs.velocity_hi - gs.velocity_lo) / (gs.velocity_nodes - 1);
  double t = wrap_angle(theta);
  if (t >= kPi) t -= 2.0 * kPi;  // [-pi, pi)
  double st = (t + kPi) / ht;
  int i0 = std::clamp(static_cast<int>(std::floor(st)), 0, gs.theta_nodes - 2);
  const double ft = std::clamp(st - i0, 0.0, 1.0);
  const double v = std::clamp(theta_dot, gs.velocity_lo, gs.velocity_hi);
  const double sv = (v - gs.velocity_lo) / hv;
  const int j0 = std::clamp(static_cast<int>(std::floor(sv)), 0, gs.velocity_nodes - 2);
  const double fv = std::clamp(sv - j0, 0.0, 1.0);
  Stencil s;
  const int nt = gs.theta_nodes;
  s.node = {i0 + nt * j0, i0 + 1 + nt * j0, i0 + nt * (j0 + 1), i0 + 1 + nt * (j0 + 1)};
  s.weight = {(1 - ft) * (1 - fv), ft * (1 - fv), (1 - ft) * fv, ft * fv};
  s.i0 = i0;
  s.j0 = j0;
  s.ft = ft;
  s.fv = fv;
  return s;
}

}  // namespace

double GridValue::interpolate(double theta, double theta_dot) const {
  const Stencil s = locate(grid, theta, theta_dot);
  const double* v = values.data();
  double out = 0.0;
  for (int k = 0; k < 4; ++k) out += s.weight[static_cast<std::size_t>(k)] * v[s.node[static_cast<std::size_t>(k)]];
  return out;
}

GridValue grid_vi(const SystemSpec& spec, const RewardSpec& rs, const GridSpec& gs, double tol, int max_sweeps,
                  const GridValue* warm_start, GridValue* partial) {
  if (spec.id != "pendulum" || spec.state_dim != 2 || spec.action_dim != 1)
    throw ContractViolation("grid_vi supports the pendulum only");
  gs.validate();
  if (std::abs(gs.dt - spec.control_dt()) > 1e-12)
    throw ContractViolation("grid_vi: grid dt must equal the control period of the system");
  const int nt = gs.theta_nodes;
  const int nv = gs.velocity_nodes;
  const int na = gs.action_levels;
  const std::size_t nodes = static_cast<std::size_t>(nt) * static_cast<std::size_t>(nv);

  // Successor stencils and one-step rewards for every (node, action).
  std::vector<Stencil> succ(nodes * static_cast<std::size_t>(na));
  std::vector<double> step_reward(nodes * static_cast<std::size_t>(na));
  std::vector<double> action_value(static_cast<std::size_t>(na));
  for (int a = 0; a < na; ++a) action_value[static_cast<std::size_t>(a)] = gs.action_at(a, spec.u_max[0]);
  parallel_for(nodes, [&](std::size_t b, std::size_t e) {
    State x(2);
    Action u(1);
    for (std::size_t n = b; n < e; ++n) {
      const int i = static_cast<int>(n % static_cast<std::size_t>(nt));
      const int j = static_cast<int>(n / static_cast<std::size_t>(nt));
      x << gs.theta_at(i), gs.velocity_at(j);
      const double q = state_reward(rs, reward_coordinates(spec, x));
      for (int a = 0; a < na; ++a) {
        u[0] = action_value[static_cast<std::size_t>(a)];
        const State next = control_step(spec, x, u);
        const std::size_t k = n * static_cast<std::size_t>(na) + static_cast<std::size_t>(a);
        succ[k] = locate(gs, next[0], next[1]);
        step_reward[k] = (q - action_cost(rs, u)) * gs.dt;
      }
    }
  });

  GridValue gv;
  gv.grid = gs;
  gv.values = Eigen::MatrixXd::Zero(nt, nv);
  if (warm_start && warm_start->values.rows() == nt && warm_start->values.cols() == nv) gv.values = warm_start->values;
  gv.actions = Eigen::MatrixXd::Zero(nt, nv);
  Eigen::MatrixXd next(nt, nv);

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    const double* v = gv.values.data();
    double* out = next.data();
    double* act = gv.actions.data();
    parallel_for(nodes, [&](std::size_t b, std::size_t e) {
      for (std::size_t n = b; n < e; ++n) {
        double best = -std::numeric_limits<double>::infinity();
        int best_a = 0;
        for (int a = 0; a < na; ++a) {
          const std::size_t k = n * static_cast<std::size_t>(na) + static_cast<std::size_t>(a);
          const Stencil& s = succ[k];
          double cont = 0.0;
          for (int c = 0; c < 4; ++c) cont += s.weight[static_cast<std::size_t>(c)] * v[s.node[static_cast<std::size_t>(c)]];
          const double q = step_reward[k] + gs.gamma * cont;
          if (q > best) {
            best = q;
            best_a = a;
          }
        }
        out[n] = best;
        act[n] = action_value[static_cast<std::size_t>(best_a)];
      }
    });
    const double residual = (next - gv.values).cwiseAbs().maxCoeff();
    gv.values.swap(next);
    gv.residuals.push_back(residual);
    gv.sweeps = sweep + 1;
    if (residual < tol) return gv;
  }
  const double last = gv.residuals.empty() ? std::numeric_limits<double>::infinity() : gv.residuals.back();
  if (partial) *partial = gv;
  throw NonConvergenceError("grid_vi did not converge within " + std::to_string(max_sweeps) + " sweeps", last);
}

void GridValueModel::evaluate_batch(const Eigen::Ref<const StateBatch>& x, Eigen::Ref<Eigen::RowVectorXd> values,
                                    Eigen::MatrixXd* grad) const {
  if (x.rows() != 2) throw ContractViolation("GridValueModel: pendulum states expected");
  const GridSpec& gs = gv_.grid;
  const double ht = 2.0 * kPi / (gs.theta_nodes - 1);
  const double hv = (gs.velocity_hi - gs.velocity_lo) / (gs.velocity_nodes - 1);
  if (grad) grad->resize(2, x.cols());
  const auto& v = gv_.values;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const Stencil s = locate(gs, x(0, c), x(1, c));
    const double v00 = v(s.i0, s.j0), v10 = v(s.i0 + 1, s.j0);
    const double v01 = v(s.i0, s.j0 + 1), v11 = v(s.i0 + 1, s.j0 + 1);
    values[c] = (1 - s.ft) * (1 - s.fv) * v00 + s.ft * (1 - s.fv) * v10 + (1 - s.ft) * s.fv * v01 + s.ft * s.fv * v11;
    if (grad) {
      (*grad)(0, c) = ((1 - s.fv) * (v10 - v00) + s.fv * (v11 - v01)) / ht;
      const bool clamped = x(1, c) < gs.velocity_lo || x(1, c) > gs.velocity_hi;
      (*grad)(1, c) = clamped ? 0.0 : ((1 - s.ft) * (v01 - v00) + s.ft * (v11 - v10)) / hv;
    }
  }
}

FiniteMdp FiniteMdp::random(int states, int actions, Rng& rng) {
  if (states < 1 || actions < 1) throw ContractViolation("FiniteMdp::random: sizes must be positive");
  FiniteMdp mdp;
  mdp.states = states;
  mdp.actions = actions;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  mdp.rewards.resize(states, actions);
  for (Eigen::Index j = 0; j < mdp.rewards.cols(); ++j)
    for (Eigen::Index i = 0; i < mdp.rewards.rows(); ++i) mdp.rewards(i, j) = unit(rng) * 2.0 - 1.0;
  for (int a = 0; a < actions; ++a) {
    Eigen::MatrixXd p(states, states);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      for (Eigen::Index j = 0; j < p.cols(); ++j) p(i, j) = unit(rng);
      p.row(i) /= p.row(i).sum();
    }
    mdp.transitions.push_back(std::move(p));
  }
  return mdp;
}

Eigen::VectorXd bellman(const FiniteMdp& mdp, double gamma, const Eigen::VectorXd& v) {
  if (v.size() != mdp.states) throw ContractViolation("bellman: value has wrong dimension");
  Eigen::VectorXd out = Eigen::VectorXd::Constant(mdp.states, -std::numeric_limits<double>::infinity());
  for (int a = 0; a < mdp.actions; ++a) {
    const Eigen::VectorXd q = mdp.rewards.col(a) + gamma * (mdp.transitions[static_cast<std::size_t>(a)] * v);
    out = out.cwiseMax(q);
  }
  return out;
}

Eigen::VectorXd value_iteration(const FiniteMdp& mdp, double gamma, double tol, int max_sweeps) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(mdp.states);
  for (int k = 0; k < max_sweeps; ++k) {
    Eigen::VectorXd next = bellman(mdp, gamma, v);
    const double residual = (next - v).cwiseAbs().maxCoeff();
    v = std::move(next);
    if (residual < tol) return v;
  }
  throw NonConvergenceError("value_iteration did not converge", std::numeric_limits<double>::quiet_NaN());
}

double contraction_ratio(const FiniteMdp& mdp, double gamma, const Eigen::VectorXd& vi, const Eigen::VectorXd& vj) {
  const double denom = (vi - vj).cwiseAbs().maxCoeff();
  if (denom == 0.0) return 0.0;
  return (bellman(mdp, gamma, vi) - bellman(mdp, gamma, vj)).cwiseAbs().maxCoeff() / denom;
}

double contraction_check(const FiniteMdp& mdp, double gamma, int trials, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 10.0);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    Eigen::VectorXd vi(mdp.states), vj(mdp.states);
    for (int s = 0; s < mdp.states; ++s) {
      vi[s] = normal(rng);
      vj[s] = normal(rng);
    }
    worst = std::max(worst, contraction_ratio(mdp, gamma, vi, vj));
  }
  return worst;
}

namespace {

Eigen::VectorXd average_ranks(const Eigen::VectorXd& x) {
  const auto n = static_cast<std::size_t>(x.size());
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return x[static_cast<Eigen::Index>(a)] < x[static_cast<Eigen::Index>(b)];
  });
  Eigen::VectorXd ranks(x.size());
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && x[static_cast<Eigen::Index>(idx[j + 1])] == x[static_cast<Eigen::Index>(idx[i])]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[static_cast<Eigen::Index>(idx[k])] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() < 2) throw ContractViolation("spearman: need two equal-length samples");
  const Eigen::VectorXd ra = average_ranks(a);
  const Eigen::VectorXd rb = average_ranks(b);
  const Eigen::VectorXd da = ra.array() - ra.mean();
  const Eigen::VectorXd db = rb.array() - rb.mean();
  const double denom = std::sqrt(da.squaredNorm() * db.squaredNorm());
  if (denom == 0.0) return 0.0;
  return da.dot(db) / denom;
}

ValueComparison compare_value(const ValueModel& model, const GridValue& gv, int band) {
  const GridSpec& gs = gv.grid;
  std::vector<std::pair<int, int>> nodes;
  // theta is periodic: no boundary band, but node theta_nodes-1 duplicates node 0.
  for (int j = band; j < gs.velocity_nodes - band; ++j)
    for (int i = 0; i < gs.theta_nodes - 1; ++i) nodes.emplace_back(i, j);
  StateBatch x(2, static_cast<Eigen::Index>(nodes.size()));
  Eigen::VectorXd reference(x.cols());
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const auto [i, j] = nodes[k];
    x(0, static_cast<Eigen::Index>(k)) = gs.theta_at(i);
    x(1, static_cast<Eigen::Index>(k)) = gs.velocity_at(j);
    reference[static_cast<Eigen::Index>(k)] = gv.values(i, j);
  }
  Eigen::RowVectorXd predicted(x.cols());
  model.evaluate_batch(x, predicted, nullptr);
  ValueComparison cmp;
  cmp.samples = static_cast<int>(x.cols());
  const double rmse = std::sqrt((predicted.transpose() - reference).squaredNorm() / static_cast<double>(x.cols()));
  const double mean = reference.mean();
  const double stddev = std::sqrt((reference.array() - mean).square().sum() / static_cast<double>(x.cols()));
  cmp.rmse_normalized = stddev > 0.0 ? rmse / stddev : rmse;
  cmp.rank_correlation = spearman(predicted.transpose(), reference);
  return cmp;
}

void write_grid_csv(std::ostream& os, const GridValue& gv) {
  const auto precision = os.precision(std::numeric_limits<double>::max_digits10);
  os << "theta,theta_dot,value,action\n";
  for (int j = 0; j < gv.grid.velocity_nodes; ++j)
    for (int i = 0; i < gv.grid.theta_nodes; ++i)
      os << gv.grid.theta_at(i) << ',' << gv.grid.velocity_at(j) << ',' << (gv.values(i, j) + 0.0) << ','
         << gv.actions(i, j) << '\n';
  os.precision(precision);
}

}  // namespace cfvi
