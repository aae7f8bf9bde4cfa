#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cfvi/checkpoint.hpp"
#include "cfvi/config.hpp"
#include "cfvi/dynamics.hpp"
#include "cfvi/evaluation.hpp"
#include "cfvi/features.hpp"
#include "cfvi/hjb.hpp"
#include "cfvi/oracle.hpp"
#include "cfvi/reward.hpp"
#include "cfvi/value_ensemble.hpp"
#include "cli.hpp"

namespace fs = std::filesystem;
using namespace cfvi;

namespace {

using Clock = std::chrono::steady_clock;

double minutes_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count() / 60.0;
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Context {
  fs::path recipes;
  fs::path work;
  std::ofstream log;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

int cli(Context& ctx, std::vector<std::string> args) {
  args.insert(args.begin(), "cfvi");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  ctx.log << "$";
  for (const auto& a : args) ctx.log << ' ' << a;
  ctx.log << std::endl;
  return cfvi::cli::run(static_cast<int>(argv.size()), argv.data(), ctx.log, ctx.log);
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw std::runtime_error("missing " + p.string());
  return nlohmann::json::parse(is);
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Highest-iteration checkpoint of a run (early stopping may end before train.iterations).
fs::path final_checkpoint(const RunConfig& cfg, const fs::path& dir) {
  const std::string prefix = checkpoint_name(cfg.system, to_string(cfg.train.mode), 0);
  const std::string stem = prefix.substr(0, prefix.size() - 1);
  fs::path best;
  int best_iter = -1;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind(stem, 0) != 0) continue;
    const std::string tail = name.substr(stem.size());
    if (tail.empty() || tail.find_first_not_of("0123456789") != std::string::npos) continue;
    const int it = std::stoi(tail);
    if (it > best_iter) {
      best_iter = it;
      best = e.path();
    }
  }
  if (best.empty()) throw std::runtime_error("no checkpoint in " + dir.string());
  return best;
}

// Trains a recipe once per process; later criteria reuse the artifacts.
struct TrainedRun {
  RunConfig cfg;
  fs::path dir;
  int exit_code = -1;
  double minutes = 0.0;
};

TrainedRun& trained(Context& ctx, const std::string& recipe) {
  static std::map<std::string, TrainedRun> runs;
  auto it = runs.find(recipe);
  if (it != runs.end()) return it->second;
  TrainedRun r;
  const fs::path path = ctx.recipes / (recipe + ".cfg");
  r.cfg = load_config(path.string());
  r.cfg.finalize();
  r.dir = ctx.work / recipe;
  fs::remove_all(r.dir);
  const auto t0 = Clock::now();
  r.exit_code = cli(ctx, {"train", path.string(), "--out", r.dir.string(), "--quiet"});
  r.minutes = minutes_since(t0);
  return runs.emplace(recipe, std::move(r)).first->second;
}

std::string run_summary(const TrainedRun& r) {
  return "exit=" + std::to_string(r.exit_code) + " minutes=" + fmt(r.minutes, 3);
}

// ---------------------------------------------------------------- A1

Verdict a1(Context& ctx) {
  TrainedRun& r = trained(ctx, "pendulum_dp");
  const TrainConfig& t = r.cfg.train;
  std::ostringstream d;
  bool recipe_ok = r.cfg.system == "pendulum" && t.mode == TrainMode::DP && t.dataset_size == 20000 &&
                   t.target.lambda == 0.9 && t.iterations <= 200 && r.cfg.eval.n_rollouts == 100 &&
                   r.cfg.eval.duration == 15.0 && r.cfg.eval.init == InitDistribution::Downward;
  d << "recipe=" << (recipe_ok ? "ok" : "mismatch") << ' ' << run_summary(r);
  if (r.exit_code != 0) return {false, d.str()};
  const double s = read_json(r.dir / "eval_summary.json").at("success_rate").get<double>();
  d << " success=" << fmt(s) << " (>= 0.95, <= 45 min)";
  return {recipe_ok && s >= 0.95 && r.minutes <= 45.0, d.str()};
}

// ---------------------------------------------------------------- A2

Verdict a2(Context& ctx) {
  TrainedRun& r = trained(ctx, "pendulum_dp");
  if (r.exit_code != 0) return {false, "training failed, " + run_summary(r)};
  const SystemSpec spec = build_system(r.cfg);
  const RewardSpec rs = build_reward(r.cfg, spec);
  const FeatureTransform ft(spec);
  GridSpec gs = GridSpec::for_system(spec, r.cfg.train.target.rho);
  const auto t0 = Clock::now();
  const GridValue gv = grid_vi(spec, rs, gs, 1e-6, 100000);
  const double oracle_minutes = minutes_since(t0);
  const Checkpoint ckpt = load_checkpoint(final_checkpoint(r.cfg, r.dir).string());
  const ValueComparison c = compare_value(EnsembleValue(ckpt.ensemble, ft), gv);
  std::ostringstream d;
  d << "nrmse=" << fmt(c.rmse_normalized) << " (<= 0.15) rank=" << fmt(c.rank_correlation) << " (>= 0.95) oracle_minutes="
    << fmt(oracle_minutes, 3) << " (<= 10) sweeps=" << gv.sweeps << " samples=" << c.samples;
  // not judged: the same comparison against a 401x401 grid, which has far less interpolation diffusion
  GridSpec fine = gs;
  fine.theta_nodes = 401;
  fine.velocity_nodes = 401;
  const GridValue gv_fine = grid_vi(spec, rs, fine, 1e-6, 100000);
  const ValueComparison c_fine = compare_value(EnsembleValue(ckpt.ensemble, ft), gv_fine, 8);
  d << "; info: nrmse_vs_401x401=" << fmt(c_fine.rmse_normalized);
  return {c.rmse_normalized <= 0.15 && c.rank_correlation >= 0.95 && oracle_minutes <= 10.0, d.str()};
}

// ---------------------------------------------------------------- A3

Verdict a3(Context&) {
  const double gamma = 0.9;
  Rng rng = make_rng(2024, "contraction");
  double worst = 0.0;
  double shift_err = 0.0;
  for (int m = 0; m < 10; ++m) {
    const FiniteMdp mdp = FiniteMdp::random(50, 4, rng);
    worst = std::max(worst, contraction_check(mdp, gamma, 100, rng));
    std::normal_distribution<double> nd(0.0, 10.0);
    for (int k = 0; k < 10; ++k) {
      Eigen::VectorXd v(50);
      for (auto& e : v) e = nd(rng);
      const double c = nd(rng);
      const double ratio = contraction_ratio(mdp, gamma, v, (v.array() + c).matrix());
      shift_err = std::max(shift_err, std::abs(ratio - gamma));
    }
  }
  std::ostringstream d;
  d << "max_ratio=" << std::setprecision(17) << worst << " (<= 0.9 + 1e-12) shift_err=" << std::setprecision(3)
    << shift_err << " (<= 1e-12)";
  return {worst <= gamma + 1e-12 && shift_err <= 1e-12, d.str()};
}

// ---------------------------------------------------------------- A4

Verdict a4(Context&) {
  double worst = 0.0;
  long outside = 0;
  long checked = 0;
  Rng rng = make_rng(7, "conjugacy");
  for (const char* id : {"pendulum", "cartpole", "furuta"}) {
    const SystemSpec spec = make_system(id);
    const RewardSpec rs = make_reward(spec);
    const double beta = rs.action_cost_beta;
    std::uniform_real_distribution<double> wd(-100.0 * beta, 100.0 * beta);
    for (int i = 0; i < 10000; ++i) {
      Eigen::VectorXd w(spec.action_dim);
      for (auto& e : w) e = wd(rng);
      const Eigen::VectorXd u = conjugate_gradient(rs, w);
      if ((u.array().abs() >= rs.u_max.array()).any()) {
        ++outside;
        continue;
      }
      const Eigen::VectorXd back = action_cost_gradient(rs, u);
      for (Eigen::Index k = 0; k < w.size(); ++k)
        worst = std::max(worst, std::abs(back[k] - w[k]) / std::max(1.0, std::abs(w[k])));
    }
    const FeatureTransform ft(spec);
    const ValueEnsemble ve(ft.feature_dim(), EnsembleConfig{}, 11);
    const EnsembleValue value(ve, ft);
    const int n = 100000;
    const StateBatch x = sample_domain(spec, n, 12);
    const ActionBatch u = policy_batch(value, rs, spec, x);
    for (Eigen::Index j = 0; j < u.cols(); ++j) {
      ++checked;
      if (!((u.col(j).array().abs() < rs.u_max.array()).all())) ++outside;
    }
  }
  std::ostringstream d;
  d << "max_rel_err=" << std::setprecision(3) << worst << " (<= 1e-9) actions_outside_box=" << outside << " of "
    << checked << " policy states";
  return {worst <= 1e-9 && outside == 0, d.str()};
}

// ---------------------------------------------------------------- A5

double fd_rel_error(const ValueEnsemble& ve, const FeatureTransform& ft, const State& x) {
  const ValueAndGradient vg = ve.evaluate(ft, x);
  const double h = 1e-5;
  double err = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    State xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fd = (ve.evaluate(ft, xp).value - ve.evaluate(ft, xm).value) / (2.0 * h);
    err = std::max(err, std::abs(fd - vg.grad_x[i]) / std::max(1.0, std::abs(fd)));
  }
  return err;
}

Verdict a5(Context&) {
  double worst_fd = 0.0;
  double worst_value_at_goal = 0.0;
  double worst_grad_at_goal = 0.0;
  double max_value = -std::numeric_limits<double>::infinity();
  std::vector<std::pair<SystemSpec, ValueEnsemble>> cases;
  for (const char* id : {"pendulum", "cartpole", "furuta"}) {
    const SystemSpec spec = make_system(id);
    const FeatureTransform ft(spec);
    cases.emplace_back(spec, ValueEnsemble(ft.feature_dim(), EnsembleConfig{}, 3));
  }
  for (auto& [spec, ve] : cases) {
    const FeatureTransform ft(spec);
    const StateBatch x = sample_domain(spec, 100, 4);
    for (Eigen::Index j = 0; j < x.cols(); ++j) worst_fd = std::max(worst_fd, fd_rel_error(ve, ft, x.col(j)));
  }
  for (const char* id : {"pendulum", "cartpole", "furuta"}) {
    const SystemSpec spec = make_system(id);
    const FeatureTransform ft(spec);
    for (std::uint64_t seed = 100; seed < 110; ++seed) {
      const ValueEnsemble ve(ft.feature_dim(), EnsembleConfig{}, seed);
      const ValueAndGradient at_goal = ve.evaluate(ft, spec.x_des);
      worst_value_at_goal = std::max(worst_value_at_goal, std::abs(at_goal.value));
      worst_grad_at_goal = std::max(worst_grad_at_goal, at_goal.grad_x.cwiseAbs().maxCoeff());
      const StateBatch x = sample_domain(spec, 1000, seed);
      Eigen::RowVectorXd v(x.cols());
      ve.evaluate_batch(ft, x, v, nullptr);
      max_value = std::max(max_value, v.maxCoeff());
    }
  }
  std::ostringstream d;
  d << "fd_rel_err=" << std::setprecision(3) << worst_fd << " (<= 1e-4) |V(x_des)|=" << worst_value_at_goal
    << " |dV(x_des)|=" << worst_grad_at_goal << " max_V=" << max_value << " (<= 0)";
  return {worst_fd <= 1e-4 && worst_value_at_goal == 0.0 && worst_grad_at_goal == 0.0 && max_value <= 0.0, d.str()};
}

// ---------------------------------------------------------------- A6

Verdict a6(Context& ctx) {
  const fs::path recipe = ctx.recipes / "pendulum_lambda_ablation.cfg";
  const fs::path dir = ctx.work / "ablate_lambda";
  fs::remove_all(dir);
  const auto t0 = Clock::now();
  const int code = cli(ctx, {"ablate", "lambda", recipe.string(), "--values", "0.1", "0.5", "0.9", "--seeds", "3", "--out",
                             dir.string(), "--quiet"});
  const double minutes = minutes_since(t0);
  std::ostringstream d;
  d << "exit=" << code << " minutes=" << fmt(minutes, 4) << " (<= 180)";
  if (code != 0) return {false, d.str()};
  std::map<double, std::vector<double>> reach;
  std::ifstream is(dir / "iterations_to_success.csv");
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    // kind,"value",seed,iterations_to_80
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 4) continue;
    f[1].erase(std::remove(f[1].begin(), f[1].end(), '"'), f[1].end());
    const int it = std::stoi(f[3]);
    reach[std::stod(f[1])].push_back(it < 0 ? std::numeric_limits<double>::infinity() : it);
  }
  std::vector<double> medians;
  d << " median_iterations_to_80%:";
  for (auto& [lam, v] : reach) {
    std::sort(v.begin(), v.end());
    const double med = v.empty() ? std::numeric_limits<double>::quiet_NaN() : v[v.size() / 2];
    medians.push_back(med);
    d << " lambda=" << lam << "->" << med << " (n=" << v.size() << ")";
  }
  // medians are ordered by increasing lambda and must strictly decrease
  bool strictly = medians.size() == 3 && reach.begin()->second.size() == 3;
  for (std::size_t i = 1; strictly && i < medians.size(); ++i)
    strictly = std::isfinite(medians[i]) && medians[i] < medians[i - 1];
  return {strictly && minutes <= 180.0, d.str()};
}

// ---------------------------------------------------------------- A7

class ConstantValue final : public ValueModel {
 public:
  ConstantValue(int dim, double c) : dim_(dim), c_(c) {}
  int state_dim() const override { return dim_; }
  void evaluate_batch(const Eigen::Ref<const StateBatch>& x, Eigen::Ref<Eigen::RowVectorXd> values,
                      Eigen::MatrixXd* grad) const override {
    values.setConstant(c_);
    if (grad) grad->setZero(dim_, x.cols());
  }

 private:
  int dim_;
  double c_;
};

Verdict a7(Context&) {
  double one_step_err = 0.0;
  double const_err = 0.0;
  for (const char* id : {"pendulum", "cartpole"}) {
    const SystemSpec spec = make_system(id);
    const RewardSpec rs = make_reward(spec);
    const FeatureTransform ft(spec);
    const ValueEnsemble ve(ft.feature_dim(), EnsembleConfig{}, 21);
    const EnsembleValue value(ve, ft);
    TargetConfig tc;
    tc.lambda = 0.0;
    tc.dt = spec.control_dt();
    const StateBatch x = sample_domain(spec, 1000, 22);
    const TargetBatch tb = n_step_targets(value, rs, spec, tc, x);
    const double gamma = std::exp(-tc.rho * tc.dt);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const State xj = x.col(j);
      const Action u = policy(value, rs, spec, xj);
      const double r = reward(rs, reward_coordinates(spec, xj), u);
      const State next = control_step(spec, xj, u);
      const double expected = r * tc.dt + gamma * ve.evaluate(ft, next).value;
      one_step_err = std::max(one_step_err, std::abs(tb.targets[j] - expected));
    }

    RewardSpec zero = rs;
    zero.q_diag.setZero();
    for (const double lam : {0.0, 0.5, 0.9, 0.99}) {
      TargetConfig flat = tc;
      flat.rho = 0.0;
      flat.lambda = lam;
      const double c = -3.25;
      const TargetBatch cb = n_step_targets(ConstantValue(spec.state_dim, c), zero, spec, flat, x);
      const_err = std::max(const_err, (cb.targets.array() - c).abs().maxCoeff());
    }
  }
  std::ostringstream d;
  d << "one_step_err=" << std::setprecision(3) << one_step_err << " (<= 1e-12) constant_err=" << const_err
    << " (<= 1e-10)";
  return {one_step_err <= 1e-12 && const_err <= 1e-10, d.str()};
}

// ---------------------------------------------------------------- A8

Verdict a8(Context& ctx) {
  TrainedRun& r = trained(ctx, "pendulum_rtdp");
  const TrainConfig& t = r.cfg.train;
  const bool recipe_ok = r.cfg.system == "pendulum" && t.mode == TrainMode::RTDP && t.target.lambda == 0.5 &&
                         t.iterations <= 400 && r.cfg.eval.n_rollouts == 100;
  std::ostringstream d;
  d << "recipe=" << (recipe_ok ? "ok" : "mismatch") << ' ' << run_summary(r);
  if (r.exit_code != 0) return {false, d.str()};
  const double s = read_json(r.dir / "eval_summary.json").at("success_rate").get<double>();
  d << " iterations=" << t.iterations << " success=" << fmt(s) << " (>= 0.9)";
  return {recipe_ok && s >= 0.9, d.str()};
}

// ---------------------------------------------------------------- A9

Verdict a9(Context& ctx) {
  TrainedRun& r = trained(ctx, "cartpole_dp");
  std::ostringstream d;
  d << run_summary(r);
  if (r.exit_code != 0) return {false, d.str()};
  const fs::path traces = ctx.work / "cartpole_traces";
  fs::remove_all(traces);
  const fs::path summary = ctx.work / "cartpole_eval.json";
  const int code = cli(ctx, {"eval", final_checkpoint(r.cfg, r.dir).string(), "--rollouts", "100", "--seed",
                             std::to_string(r.cfg.train.seed), "--out", summary.string(), "--traces", traces.string()});
  d << " eval_exit=" << code;
  if (code != 0) return {false, d.str()};
  const nlohmann::json j = read_json(summary);
  const double s = j.at("success_rate").get<double>();
  int trace_files = 0;
  for (const auto& e : fs::directory_iterator(traces))
    if (e.path().extension() == ".csv") ++trace_files;
  d << " success=" << fmt(s) << " (>= 0.8) traces=" << trace_files << "/100 blowups=" << j.value("blowups", -1);
  return {s >= 0.8 && trace_files == 100, d.str()};
}

// ---------------------------------------------------------------- A10

Verdict a10(Context& ctx) {
  std::ostringstream d;
  bool same = true;
  for (const char* recipe : {"pendulum_dp", "pendulum_rtdp"}) {
    const fs::path path = ctx.recipes / (std::string(recipe) + ".cfg");
    std::string first;
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path dir = ctx.work / ("repro_" + std::string(recipe) + "_" + std::to_string(rep));
      fs::remove_all(dir);
      const int code = cli(ctx, {"train", path.string(), "--out", dir.string(), "--deterministic", "--skip-eval",
                                 "--quiet", "--set", "train.iterations=4", "--set", "train.eval_every=2", "--set",
                                 "train.dataset_size=2000", "--set", "train.buffer_capacity=2000"});
      if (code != 0) {
        d << recipe << ": exit " << code << "; ";
        same = false;
        break;
      }
      const std::string curve = slurp(dir / "learning_curve.csv");
      if (rep == 0) {
        first = curve;
      } else {
        const bool eq = !curve.empty() && curve == first;
        same = same && eq;
        d << recipe << (eq ? " identical" : " DIFFERENT") << " (" << curve.size() << " bytes); ";
      }
    }
  }
  return {same, d.str()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cfvi acceptance checks"};
  std::string only;
  std::string work = "acceptance_work";
  std::string recipes = CFVI_RECIPE_DIR;
  app.add_option("--only", only, "Comma-separated subset, e.g. A3,A4");
  app.add_option("--work", work, "Scratch directory for training artifacts");
  app.add_option("--recipes", recipes, "Directory with the recipe configs");
  CLI11_PARSE(app, argc, argv);

  std::set<std::string> selected;
  {
    std::istringstream ss(only);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) selected.insert(item);
  }

  Context ctx;
  ctx.recipes = recipes;
  ctx.work = fs::absolute(work);
  fs::create_directories(ctx.work);
  ctx.log.open(ctx.work / "acceptance.log", std::ios::app);

  const std::vector<std::pair<std::string, std::function<Verdict(Context&)>>> criteria{
      {"A1", a1}, {"A2", a2}, {"A3", a3}, {"A4", a4}, {"A5", a5},
      {"A6", a6}, {"A7", a7}, {"A8", a8}, {"A9", a9}, {"A10", a10}};

  int failures = 0;
  for (const auto& [name, check] : criteria) {
    if (!selected.empty() && !selected.count(name)) continue;
    Verdict v;
    const auto t0 = Clock::now();
    try {
      v = check(ctx);
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    if (!v.pass) ++failures;
    std::cout << name << ' ' << (v.pass ? "PASS" : "FAIL") << "  " << v.detail << "  [" << fmt(minutes_since(t0), 3)
              << " min]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
