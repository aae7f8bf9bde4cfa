#include "cfvi/value_ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cfvi/errors.hpp"
#include "cfvi/parallel.hpp"

namespace cfvi {

namespace {

constexpr Eigen::Index kChunk = 256;

double softplus(double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }
double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

std::vector<Mlp> make_members(int feature_dim, const EnsembleConfig& cfg, std::uint64_t seed) {
  if (cfg.members < 1) throw ConfigError("ensemble needs at least one member");
  if (!is_smooth(cfg.activation))
    throw ConfigError("activation '" + to_string(cfg.activation) + "' is not smooth; value gradients must exist");
  if (!(cfg.diag_floor > 0.0)) throw ConfigError("diag_floor must be positive");
  if (feature_dim <= 0) throw ContractViolation("ValueEnsemble: feature_dim must be positive");
  const NetworkArch arch{feature_dim, cfg.hidden, feature_dim * (feature_dim + 1) / 2, cfg.activation};
  std::vector<Mlp> nets;
  for (int i = 0; i < cfg.members; ++i) {
    Rng rng = make_rng(seed, "member" + std::to_string(i));
    Mlp net(arch, rng);
    // small output head: the initial value is a shallow bowl rather than a steep one
    net.weights().back() *= 0.1;
    net.biases().back() *= 0.1;
    for (int r = 0; r < feature_dim; ++r) net.biases().back()[r * (r + 1) / 2 + r] -= 1.0;
    nets.push_back(std::move(net));
  }
  return nets;
}

}  // namespace

ValueEnsemble::ValueEnsemble(int feature_dim, const EnsembleConfig& cfg, std::uint64_t seed)
    : ValueEnsemble(feature_dim, cfg, make_members(feature_dim, cfg, seed)) {}

ValueEnsemble::ValueEnsemble(int feature_dim, const EnsembleConfig& cfg, std::vector<Mlp> members)
    : dim_(feature_dim), cfg_(cfg), nets_(std::move(members)) {
  if (nets_.empty()) throw ConfigError("ensemble needs at least one member");
  if (!(cfg.diag_floor > 0.0)) throw ConfigError("diag_floor must be positive");
  if (!is_smooth(cfg.activation))
    throw ConfigError("activation '" + to_string(cfg.activation) + "' is not smooth; value gradients must exist");
  const NetworkArch expected{feature_dim, cfg.hidden, feature_dim * (feature_dim + 1) / 2, cfg.activation};
  for (const auto& n : nets_)
    if (!(n.arch() == expected)) throw ContractViolation("ValueEnsemble: member architectures differ");
  cfg_.members = static_cast<int>(nets_.size());
  row_.clear();
  col_.clear();
  diag_.clear();
  for (int r = 0; r < dim_; ++r) {
    for (int c = 0; c <= r; ++c) {
      if (r == c) diag_.push_back(static_cast<int>(row_.size()));
      row_.push_back(r);
      col_.push_back(c);
    }
  }
}

void ValueEnsemble::member_factor(int member, const Eigen::Ref<const Eigen::MatrixXd>& z, ForwardCache& cache,
                                  Eigen::MatrixXd& factor) const {
  nets_[static_cast<std::size_t>(member)].forward(z, cache);
  factor = cache.output;
  for (const int k : diag_)
    factor.row(k) = factor.row(k).unaryExpr([&](double v) { return softplus(v) + cfg_.diag_floor; });
}

namespace {

// Per-thread buffers for evaluate_batch; large temporaries would otherwise be
// reallocated on every call of the rollout inner loop.
struct EvalWorkspace {
  std::vector<ForwardCache> caches;
  Eigen::MatrixXd z, e, factor, mean, y, g, dz, d_out, d_in;
};

}  // namespace

void ValueEnsemble::evaluate_batch(const FeatureTransform& ft, const Eigen::Ref<const StateBatch>& x,
                                   Eigen::Ref<Eigen::RowVectorXd> values, Eigen::MatrixXd* grad) const {
  if (ft.feature_dim() != dim_ || x.rows() != ft.state_dim())
    throw ContractViolation("ValueEnsemble::evaluate: dimension mismatch");
  if (values.size() != x.cols()) throw ContractViolation("ValueEnsemble::evaluate: values has wrong size");
  if (grad) grad->resize(x.rows(), x.cols());
  const auto n_members = static_cast<std::size_t>(nets_.size());
  const double inv_n = 1.0 / static_cast<double>(n_members);
  const auto n_entries = static_cast<Eigen::Index>(row_.size());

  thread_local EvalWorkspace ws;
  if (ws.caches.size() < n_members) ws.caches.resize(n_members);
  for (Eigen::Index begin = 0; begin < x.cols(); begin += kChunk) {
    const Eigen::Index cols = std::min(kChunk, x.cols() - begin);
    const auto xc = x.middleCols(begin, cols);
    ws.z.resize(dim_, cols);
    ft.transform_batch(xc, ws.z);
    ws.e = ws.z.colwise() - ft.z_des();

    ws.mean.setZero(n_entries, cols);
    for (std::size_t i = 0; i < n_members; ++i) {
      member_factor(static_cast<int>(i), ws.z, ws.caches[i], ws.factor);
      ws.mean += ws.factor;
    }
    ws.mean *= inv_n;

    // y = Lbar^T e, V = -|y|^2
    ws.y.setZero(dim_, cols);
    for (Eigen::Index k = 0; k < n_entries; ++k)
      ws.y.row(col_[static_cast<std::size_t>(k)]).array() +=
          ws.mean.row(k).array() * ws.e.row(row_[static_cast<std::size_t>(k)]).array();
    values.segment(begin, cols) = -ws.y.colwise().squaredNorm();
    if (!grad) continue;

    // dV/dLbar(k) = -2 e_r y_c, dV/de_r = -2 sum_c Lbar(r, c) y_c
    ws.g.resize(n_entries, cols);
    ws.dz.setZero(dim_, cols);
    for (Eigen::Index k = 0; k < n_entries; ++k) {
      const int r = row_[static_cast<std::size_t>(k)];
      const int c = col_[static_cast<std::size_t>(k)];
      ws.g.row(k).array() = -2.0 * inv_n * ws.e.row(r).array() * ws.y.row(c).array();
      ws.dz.row(r).array() -= 2.0 * ws.mean.row(k).array() * ws.y.row(c).array();
    }
    for (std::size_t i = 0; i < n_members; ++i) {
      ws.d_out = ws.g;
      for (const int k : diag_)
        ws.d_out.row(k).array() *= ws.caches[i].output.row(k).unaryExpr([](double v) { return sigmoid(v); }).array();
      nets_[i].backward_input(ws.caches[i], ws.d_out, ws.d_in);
      ws.dz += ws.d_in;
    }
    auto gx = grad->middleCols(begin, cols);
    ft.pullback_batch(xc, ws.dz, gx);
  }
}

ValueAndGradient ValueEnsemble::evaluate(const FeatureTransform& ft, const State& x) const {
  if (x.size() != ft.state_dim()) throw ContractViolation("ValueEnsemble::evaluate: state has wrong dimension");
  Eigen::RowVectorXd v(1);
  Eigen::MatrixXd g;
  evaluate_batch(ft, x, v, &g);
  return {v[0], g.col(0)};
}

void ValueEnsemble::member_values(int member, const FeatureTransform& ft, const Eigen::Ref<const StateBatch>& x,
                                  Eigen::Ref<Eigen::RowVectorXd> values) const {
  if (member < 0 || member >= members()) throw ContractViolation("member_values: member index out of range");
  Eigen::MatrixXd z(dim_, x.cols());
  ft.transform_batch(x, z);
  const Eigen::MatrixXd e = z.colwise() - ft.z_des();
  ForwardCache cache;
  Eigen::MatrixXd factor;
  member_factor(member, z, cache, factor);
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(dim_, x.cols());
  for (std::size_t k = 0; k < row_.size(); ++k)
    y.row(col_[k]).array() += factor.row(static_cast<Eigen::Index>(k)).array() * e.row(row_[k]).array();
  values = -y.colwise().squaredNorm();
}

Eigen::MatrixXd ValueEnsemble::lower_factor(const FeatureTransform& ft, const State& x, int member) const {
  const Eigen::VectorXd z = ft.transform(x);
  ForwardCache cache;
  Eigen::MatrixXd factor;
  Eigen::VectorXd flat = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(row_.size()));
  if (member >= 0) {
    member_factor(member, z, cache, factor);
    flat = factor.col(0);
  } else {
    for (int i = 0; i < members(); ++i) {
      member_factor(i, z, cache, factor);
      flat += factor.col(0);
    }
    flat /= static_cast<double>(members());
  }
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(dim_, dim_);
  for (std::size_t k = 0; k < row_.size(); ++k) l(row_[k], col_[k]) = flat[static_cast<Eigen::Index>(k)];
  return l;
}

FitResult ValueEnsemble::fit(const FeatureTransform& ft, const Eigen::Ref<const StateBatch>& states,
                             const Eigen::Ref<const Eigen::VectorXd>& targets, const FitConfig& cfg,
                             std::uint64_t seed) {
  const Eigen::Index n = states.cols();
  if (n == 0 || targets.size() != n) throw ContractViolation("fit: states and targets must be non-empty and match");
  if (cfg.epochs < 0 || cfg.minibatch < 1) throw ConfigError("fit: epochs >= 0 and minibatch >= 1 required");
  if (!targets.allFinite()) throw ContractViolation("fit: targets must be finite");

  Eigen::MatrixXd z_all(dim_, n);
  ft.transform_batch(states, z_all);
  const Eigen::MatrixXd e_all = z_all.colwise() - ft.z_des();

  if (cfg.objective == FitObjective::Ensemble) {
    auto ensemble_loss = [&]() {
      Eigen::RowVectorXd v(n);
      evaluate_batch(ft, states, v, nullptr);
      return (v.transpose() - targets).squaredNorm() / static_cast<double>(n);
    };
    return fit_joint(z_all, e_all, targets, cfg, seed, ensemble_loss);
  }

  auto full_loss = [&](int member) {
    Eigen::RowVectorXd v(n);
    member_values(member, ft, states, v);
    return (v.transpose() - targets).squaredNorm() / static_cast<double>(n);
  };

  const auto n_members = static_cast<std::size_t>(nets_.size());
  FitResult result;
  result.initial_loss.resize(n_members);
  result.final_loss.resize(n_members);
  std::vector<std::vector<double>> member_epoch_loss(n_members, std::vector<double>(static_cast<std::size_t>(cfg.epochs)));
  std::vector<std::ptrdiff_t> failed(n_members, -1);

  parallel_for(n_members, [&](std::size_t begin, std::size_t end) {
    for (std::size_t m = begin; m < end; ++m) {
      Mlp& net = nets_[m];
      result.initial_loss[m] = full_loss(static_cast<int>(m));
      Adam adam(net, Adam::Options{cfg.learning_rate});
      Rng rng = make_rng(seed, "fit-member" + std::to_string(m));
      std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
      std::iota(order.begin(), order.end(), Eigen::Index{0});
      ForwardCache cache;
      MlpGradient grad;
      Eigen::MatrixXd z, e, factor, y, d_out;
      std::ptrdiff_t batch_index = 0;
      for (int epoch = 0; epoch < cfg.epochs && failed[m] < 0; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        int batches = 0;
        for (Eigen::Index start = 0; start < n; start += cfg.minibatch, ++batch_index) {
          const Eigen::Index b = std::min<Eigen::Index>(cfg.minibatch, n - start);
          z.resize(dim_, b);
          e.resize(dim_, b);
          Eigen::VectorXd t(b);
          for (Eigen::Index j = 0; j < b; ++j) {
            const Eigen::Index src = order[static_cast<std::size_t>(start + j)];
            z.col(j) = z_all.col(src);
            e.col(j) = e_all.col(src);
            t[j] = targets[src];
          }
          member_factor(static_cast<int>(m), z, cache, factor);
          y.setZero(dim_, b);
          for (std::size_t k = 0; k < row_.size(); ++k)
            y.row(col_[k]).array() += factor.row(static_cast<Eigen::Index>(k)).array() * e.row(row_[k]).array();
          const Eigen::RowVectorXd v = -y.colwise().squaredNorm();
          const Eigen::RowVectorXd resid = v - t.transpose();
          const double loss = resid.squaredNorm() / static_cast<double>(b);
          if (!std::isfinite(loss)) {
            failed[m] = batch_index;
            break;
          }
          loss_sum += loss;
          ++batches;
          // d loss / d factor(k) = 2 resid / b * (-2 e_r y_c)
          const Eigen::RowVectorXd dv = (2.0 / static_cast<double>(b)) * resid;
          d_out.resize(factor.rows(), b);
          for (std::size_t k = 0; k < row_.size(); ++k)
            d_out.row(static_cast<Eigen::Index>(k)).array() =
                -2.0 * dv.array() * e.row(row_[k]).array() * y.row(col_[k]).array();
          for (const int k : diag_)
            d_out.row(k).array() *= cache.output.row(k).unaryExpr([](double v) { return sigmoid(v); }).array();
          net.backward_params(z, cache, d_out, grad);
          adam.step(net, grad);
        }
        if (failed[m] < 0) member_epoch_loss[m][static_cast<std::size_t>(epoch)] = loss_sum / std::max(batches, 1);
      }
      if (failed[m] < 0) result.final_loss[m] = full_loss(static_cast<int>(m));
    }
  });

  for (std::size_t m = 0; m < n_members; ++m) {
    if (failed[m] >= 0 || !std::isfinite(result.final_loss[m])) {
      std::ostringstream os;
      os << "fit diverged: non-finite loss for member " << m << " at minibatch " << failed[m];
      throw DivergenceError(os.str(), failed[m]);
    }
  }
  result.epoch_loss.assign(static_cast<std::size_t>(cfg.epochs), 0.0);
  for (std::size_t ep = 0; ep < result.epoch_loss.size(); ++ep) {
    for (std::size_t m = 0; m < n_members; ++m) result.epoch_loss[ep] += member_epoch_loss[m][ep];
    result.epoch_loss[ep] /= static_cast<double>(n_members);
  }
  return result;
}

FitResult ValueEnsemble::fit_joint(const Eigen::Ref<const Eigen::MatrixXd>& z_all,
                                   const Eigen::Ref<const Eigen::MatrixXd>& e_all,
                                   const Eigen::Ref<const Eigen::VectorXd>& targets, const FitConfig& cfg,
                                   std::uint64_t seed, const std::function<double()>& full_loss) {
  const Eigen::Index n = z_all.cols();
  const auto n_members = nets_.size();
  const double inv_n = 1.0 / static_cast<double>(n_members);
  FitResult result;
  result.initial_loss.push_back(full_loss());
  result.epoch_loss.assign(static_cast<std::size_t>(cfg.epochs), 0.0);

  std::vector<Adam> adams;
  for (const auto& net : nets_) adams.emplace_back(net, Adam::Options{cfg.learning_rate});
  std::vector<ForwardCache> caches(n_members);
  std::vector<MlpGradient> grads(n_members);
  std::vector<Eigen::MatrixXd> factors(n_members);
  Rng rng = make_rng(seed, "fit-ensemble");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Eigen::MatrixXd z, e, mean, y, d_mean;
  std::ptrdiff_t batch_index = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (Eigen::Index start = 0; start < n; start += cfg.minibatch, ++batch_index) {
      const Eigen::Index b = std::min<Eigen::Index>(cfg.minibatch, n - start);
      z.resize(dim_, b);
      e.resize(dim_, b);
      Eigen::VectorXd t(b);
      for (Eigen::Index j = 0; j < b; ++j) {
        const Eigen::Index src = order[static_cast<std::size_t>(start + j)];
        z.col(j) = z_all.col(src);
        e.col(j) = e_all.col(src);
        t[j] = targets[src];
      }
      parallel_for(n_members, [&](std::size_t mb, std::size_t me) {
        for (std::size_t m = mb; m < me; ++m) member_factor(static_cast<int>(m), z, caches[m], factors[m]);
      });
      mean = factors[0];
      for (std::size_t m = 1; m < n_members; ++m) mean += factors[m];
      mean *= inv_n;
      y.setZero(dim_, b);
      for (std::size_t k = 0; k < row_.size(); ++k)
        y.row(col_[k]).array() += mean.row(static_cast<Eigen::Index>(k)).array() * e.row(row_[k]).array();
      const Eigen::RowVectorXd resid = -y.colwise().squaredNorm() - t.transpose();
      const double loss = resid.squaredNorm() / static_cast<double>(b);
      if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "fit diverged: non-finite ensemble loss at minibatch " << batch_index;
        throw DivergenceError(os.str(), batch_index);
      }
      loss_sum += loss;
      ++batches;
      // d loss / d mean(k), shared by all members up to the 1/N of the mean
      const Eigen::RowVectorXd dv = (2.0 / static_cast<double>(b)) * resid;
      d_mean.resize(mean.rows(), b);
      for (std::size_t k = 0; k < row_.size(); ++k)
        d_mean.row(static_cast<Eigen::Index>(k)).array() =
            -2.0 * inv_n * dv.array() * e.row(row_[k]).array() * y.row(col_[k]).array();
      parallel_for(n_members, [&](std::size_t mb, std::size_t me) {
        for (std::size_t m = mb; m < me; ++m) {
          Eigen::MatrixXd d_out = d_mean;
          for (const int k : diag_)
            d_out.row(k).array() *= caches[m].output.row(k).unaryExpr([](double v) { return sigmoid(v); }).array();
          nets_[m].backward_params(z, caches[m], d_out, grads[m]);
          adams[m].step(nets_[m], grads[m]);
        }
      });
    }
    result.epoch_loss[static_cast<std::size_t>(epoch)] = loss_sum / std::max(batches, 1);
  }
  result.final_loss.push_back(full_loss());
  if (!std::isfinite(result.final_loss[0]))
    throw DivergenceError("fit diverged: non-finite ensemble loss after fitting", batch_index);
  return result;
}

FitObjective parse_fit_objective(std::string_view name) {
  if (name == "member") return FitObjective::Member;
  if (name == "ensemble") return FitObjective::Ensemble;
  throw ConfigError("unknown fit objective '" + std::string(name) + "' (expected member or ensemble)");
}

std::string to_string(FitObjective objective) {
  return objective == FitObjective::Member ? "member" : "ensemble";
}

}  // namespace cfvi
