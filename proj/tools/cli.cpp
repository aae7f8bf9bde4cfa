#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cfvi/checkpoint.hpp"
#include "cfvi/config.hpp"
#include "cfvi/errors.hpp"
#include "cfvi/evaluation.hpp"
#include "cfvi/features.hpp"
#include "cfvi/hjb.hpp"
#include "cfvi/oracle.hpp"
#include "cfvi/parallel.hpp"
#include "cfvi/training.hpp"

namespace fs = std::filesystem;

namespace cfvi::cli {

namespace {

constexpr const char* kOutputRootEnv = "CFVI_OUTPUT_ROOT";

struct Common {
  int workers = 1;
  bool deterministic = false;
  std::vector<std::string> sets;
};

fs::path output_path(const std::string& dir) {
  fs::path p(dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) p = fs::path(root) / p;
  }
  return p;
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw ConfigError(p.string() + ": cannot create output directory: " + ec.message());
}

std::ofstream open_out(const fs::path& p, std::ios::openmode mode = std::ios::out | std::ios::trunc) {
  std::ofstream os(p, mode);
  if (!os) throw ConfigError(p.string() + ": cannot open for writing");
  return os;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& sets) {
  RunConfig cfg = load_config(path);
  for (const auto& s : sets) apply_override(cfg, s);
  cfg.finalize();
  return cfg;
}

void apply_common(const Common& c) { set_workers(c.deterministic ? 1 : c.workers); }

std::string describe(const EvalResult& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << "success " << 100.0 * r.success_rate << "%  reward "
     << std::setprecision(3) << r.reward_mean << " +- " << r.reward_ci95;
  if (r.blowups > 0) os << "  (" << r.blowups << " integration blowups)";
  return os.str();
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::string out;
  std::string resume;
  bool skip_eval = false;
  bool quiet = false;
};

struct RunOutputs {
  LearningCurve curve;
  EvalResult final_eval;
};

// Shared by `train` and `ablate`.
RunOutputs run_training(const RunConfig& cfg, const fs::path& dir, bool deterministic, bool checkpoints,
                        bool final_eval, const Checkpoint* resume, std::ostream& log, bool quiet) {
  ensure_dir(dir);
  {
    auto os = open_out(dir / "config.resolved");
    os << resolved_config(cfg);
  }
  const SystemSpec spec = build_system(cfg);
  const RewardSpec rs = build_reward(cfg, spec);
  const FeatureTransform ft(spec);
  const std::string mode = to_string(cfg.train.mode);
  const std::string resolved = resolved_config(cfg);

  const auto curve_mode = resume ? std::ios::out | std::ios::app : std::ios::out | std::ios::trunc;
  auto curve = open_out(dir / "learning_curve.csv", curve_mode);
  // Wall time would make reruns differ; deterministic runs keep it in a separate file.
  const bool time_in_curve = !deterministic;
  std::ofstream timing;
  if (!resume) write_curve_header(curve, time_in_curve);
  if (deterministic) {
    timing = open_out(dir / "timing.csv", curve_mode);
    if (!resume) timing << "iteration,seconds\n";
  }

  auto make_ckpt = [&](const ValueEnsemble& ve, int iteration, const ReplayBuffer* buffer) {
    Checkpoint c;
    c.ensemble = ve;
    c.iteration = iteration;
    c.system = cfg.system;
    c.mode = mode;
    c.config = resolved;
    if (buffer) c.buffer = buffer->states();
    return c;
  };

  TrainHooks hooks;
  hooks.on_iteration = [&](const IterationReport& r, const ValueEnsemble& ve, const ReplayBuffer* buffer) {
    if (!quiet) {
      log << "iter " << r.iteration << "/" << cfg.train.iterations << "  loss " << std::setprecision(4) << r.fit_loss
          << "  invalid " << r.invalid_targets << "/" << r.samples << "  targets " << std::setprecision(3)
          << r.target_seconds << "s  fit " << r.fit_seconds << "s";
      if (r.evaluation)
        log << "  | success " << std::setprecision(3) << 100.0 * r.evaluation->success_rate << "%  reward "
            << r.evaluation->mean_reward;
      log << std::endl;
    }
    if (r.evaluation) {
      write_curve_row(curve, *r.evaluation, time_in_curve);
      curve.flush();
      if (timing.is_open()) timing << r.evaluation->iteration << ',' << r.evaluation->seconds << std::endl;
    }
    if (checkpoints && cfg.checkpoint_every > 0 && r.iteration % cfg.checkpoint_every == 0 &&
        r.iteration != cfg.train.iterations)
      save_checkpoint((dir / checkpoint_name(cfg.system, mode, r.iteration)).string(), make_ckpt(ve, r.iteration, buffer));
  };
  hooks.on_abort = [&](int iteration, const ValueEnsemble& ve, const std::string& reason) {
    nlohmann::json j;
    j["iteration"] = iteration;
    j["reason"] = reason;
    j["checkpoint"] = checkpoint_name(cfg.system, mode, iteration);
    auto os = open_out(dir / "abort.json");
    os << j.dump(2) << '\n';
    save_checkpoint((dir / checkpoint_name(cfg.system, mode, iteration)).string(), make_ckpt(ve, iteration, nullptr));
  };

  TrainState state;
  if (resume) {
    state.iteration = resume->iteration;
    state.ensemble = resume->ensemble;
    state.buffer = resume->buffer;
  }
  TrainResult res = train(cfg.train, spec, rs, ft, hooks, resume ? &state : nullptr);
  // The buffer is only needed to resume RTDP; the final checkpoint keeps the ensemble.
  if (checkpoints)
    save_checkpoint((dir / checkpoint_name(cfg.system, mode, res.iterations)).string(),
                    make_ckpt(res.ensemble, res.iterations, nullptr));

  RunOutputs out;
  out.curve = std::move(res.curve);
  if (final_eval) {
    out.final_eval = evaluate_policy(EnsembleValue(res.ensemble, ft), rs, spec, cfg.eval, cfg.train.seed, false);
    auto os = open_out(dir / "eval_summary.json");
    write_summary_json(os, out.final_eval);
    if (!quiet) log << "final evaluation (" << cfg.eval.n_rollouts << " rollouts): " << describe(out.final_eval) << std::endl;
  }
  return out;
}

int cmd_train(const TrainArgs& a, const Common& c, std::ostream& out) {
  RunConfig cfg = load_run_config(a.config, c.sets);
  const fs::path dir = output_path(a.out.empty() ? cfg.output_dir : a.out);
  std::optional<Checkpoint> resume;
  if (!a.resume.empty()) {
    resume = load_checkpoint(a.resume);
    const FeatureTransform ft(build_system(cfg));
    require_architecture(*resume, ft.feature_dim(), cfg.train.ensemble);
    if (resume->system != cfg.system) throw ConfigError("--resume: checkpoint was trained on " + resume->system);
  }
  out << "training " << cfg.system << " (" << to_string(cfg.train.mode) << ") into " << dir.string() << std::endl;
  run_training(cfg, dir, c.deterministic, true, !a.skip_eval, resume ? &*resume : nullptr, out, a.quiet);
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string config;
  int rollouts = -1;
  double duration = -1.0;
  std::string init;
  long long seed = -1;
  std::string out;
  std::string traces;
};

// Config of a checkpoint: an explicit file (checked against the stored architecture)
// or the resolved config stored inside it.
RunConfig checkpoint_config(const Checkpoint& ckpt, const std::string& config_path,
                            const std::vector<std::string>& sets) {
  RunConfig cfg = config_path.empty() ? parse_config(ckpt.config, "<checkpoint config>") : load_config(config_path);
  for (const auto& s : sets) apply_override(cfg, s);
  cfg.finalize();
  const FeatureTransform ft(build_system(cfg));
  require_architecture(ckpt, ft.feature_dim(), cfg.train.ensemble);
  return cfg;
}

int cmd_eval(const EvalArgs& a, const Common& c, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  RunConfig cfg = checkpoint_config(ckpt, a.config, c.sets);
  EvalProtocol ep = cfg.eval;
  if (a.rollouts > 0) ep.n_rollouts = a.rollouts;
  if (a.duration > 0.0) ep.duration = a.duration;
  if (!a.init.empty()) ep.init = parse_init(a.init);
  ep.validate();
  const auto seed = a.seed >= 0 ? static_cast<std::uint64_t>(a.seed) : cfg.train.seed;
  const SystemSpec spec = build_system(cfg);
  const RewardSpec rs = build_reward(cfg, spec);
  const FeatureTransform ft(spec);
  const EvalResult r = evaluate_policy(EnsembleValue(ckpt.ensemble, ft), rs, spec, ep, seed, !a.traces.empty());
  out << a.checkpoint << " (iteration " << ckpt.iteration << "): " << describe(r) << std::endl;
  if (!a.out.empty()) {
    const fs::path p = output_path(a.out);
    if (p.has_parent_path()) ensure_dir(p.parent_path());
    auto os = open_out(p);
    write_summary_json(os, r);
  } else {
    write_summary_json(out, r);
  }
  if (!a.traces.empty()) {
    const fs::path dir = output_path(a.traces);
    ensure_dir(dir);
    for (std::size_t i = 0; i < r.traces.size(); ++i) {
      auto os = open_out(dir / ("trace_" + std::to_string(i) + ".csv"));
      write_trace_csv(os, r.traces[i]);
    }
  }
  return kOk;
}

// ---------------------------------------------------------------- oracle

struct OracleArgs {
  std::string system = "pendulum";
  std::string config;
  double rho = -1.0;
  int theta_nodes = 101;
  int velocity_nodes = 101;
  int actions = 11;
  double tol = 1e-6;
  int max_sweeps = 20000;
  std::string out = "oracle";
};

int cmd_oracle(const OracleArgs& a, const Common& c, std::ostream& out) {
  RunConfig cfg;
  if (!a.config.empty()) cfg = load_config(a.config);
  if (a.config.empty() || a.system != "pendulum") cfg.system = a.system;
  for (const auto& s : c.sets) apply_override(cfg, s);
  if (a.rho >= 0.0) cfg.train.target.rho = a.rho;
  cfg.finalize();
  if (cfg.system != "pendulum") throw ConfigError("oracle: unsupported system '" + cfg.system + "' (pendulum only)");
  const SystemSpec spec = build_system(cfg);
  const RewardSpec rs = build_reward(cfg, spec);
  GridSpec gs = GridSpec::for_system(spec, cfg.train.target.rho);
  gs.theta_nodes = a.theta_nodes;
  gs.velocity_nodes = a.velocity_nodes;
  gs.action_levels = a.actions;
  gs.validate();

  const fs::path dir = output_path(a.out);
  ensure_dir(dir);
  auto write = [&](const GridValue& gv) {
    auto grid = open_out(dir / "oracle_grid.csv");
    write_grid_csv(grid, gv);
    auto conv = open_out(dir / "oracle_convergence.csv");
    conv << "sweep,residual\n" << std::setprecision(17);
    for (std::size_t i = 0; i < gv.residuals.size(); ++i) conv << i + 1 << ',' << gv.residuals[i] << '\n';
  };
  GridValue partial;
  try {
    const GridValue gv = grid_vi(spec, rs, gs, a.tol, a.max_sweeps, nullptr, &partial);
    write(gv);
    out << "oracle converged after " << gv.sweeps << " sweeps (residual " << gv.residuals.back() << ", gamma "
        << gs.gamma << "); wrote " << (dir / "oracle_grid.csv").string() << std::endl;
  } catch (const NonConvergenceError&) {
    write(partial);
    throw;
  }
  return kOk;
}

// ---------------------------------------------------------------- ablate

struct AblateArgs {
  std::string kind;
  std::string config;
  std::vector<std::string> values;
  int seeds = 3;
  std::string out;
  bool quiet = false;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_ablate(const AblateArgs& a, const Common& c, std::ostream& out) {
  std::string key;
  std::vector<std::string> values = a.values;
  if (a.kind == "lambda") {
    key = "target.lambda";
    if (values.empty()) values = {"0.1", "0.5", "0.9"};
  } else if (a.kind == "architecture") {
    key = "ensemble.hidden";
    if (values.empty()) values = {"64,64", "128,128", "128,128,128"};
  } else if (a.kind == "ensemble") {
    key = "ensemble.members";
    if (values.empty()) values = {"1", "2", "4"};
  } else {
    throw ConfigError("ablate: unknown kind '" + a.kind + "' (expected lambda | architecture | ensemble)");
  }
  if (a.seeds < 1) throw ConfigError("ablate: --seeds must be >= 1");
  RunConfig base = load_run_config(a.config, c.sets);
  const fs::path dir = output_path(a.out.empty() ? base.output_dir + "/ablate_" + a.kind : a.out);
  ensure_dir(dir);

  // Validate every variant before any compute.
  std::vector<RunConfig> variants;
  for (const auto& v : values) {
    for (int s = 0; s < a.seeds; ++s) {
      RunConfig cfg = load_config(a.config);
      for (const auto& set : c.sets) apply_override(cfg, set);
      apply_override(cfg, key + "=" + v);
      cfg.train.seed = base.train.seed + static_cast<std::uint64_t>(s);
      cfg.finalize();
      variants.push_back(std::move(cfg));
    }
  }

  auto label = [](std::string v) {
    std::replace(v.begin(), v.end(), ',', 'x');
    return v;
  };
  auto summary = open_out(dir / "summary.csv");
  summary << "kind,value,iteration,median_mean_reward,min_mean_reward,max_mean_reward,median_success_rate\n";
  auto reach = open_out(dir / "iterations_to_success.csv");
  reach << "kind,value,seed,iterations_to_80\n";
  std::size_t idx = 0;
  for (const auto& v : values) {
    std::vector<LearningCurve> curves;
    for (int s = 0; s < a.seeds; ++s, ++idx) {
      const RunConfig& cfg = variants[idx];
      const fs::path run_dir = dir / (a.kind + "_" + label(v) + "_seed" + std::to_string(cfg.train.seed));
      out << "ablate " << a.kind << "=" << v << " seed " << cfg.train.seed << std::endl;
      RunOutputs r = run_training(cfg, run_dir, c.deterministic, false, false, nullptr, out, a.quiet);
      fs::copy_file(run_dir / "learning_curve.csv", dir / (a.kind + "_" + label(v) + "_seed" +
                                                           std::to_string(cfg.train.seed) + ".csv"),
                    fs::copy_options::overwrite_existing);
      reach << a.kind << ",\"" << v << "\"," << cfg.train.seed << ',' << r.curve.iterations_to_success(0.8) << '\n';
      curves.push_back(std::move(r.curve));
    }
    // Median and min/max band across seeds per evaluation point.
    std::map<int, std::vector<std::pair<double, double>>> by_iter;
    for (const auto& cv : curves)
      for (const auto& p : cv.points) by_iter[p.iteration].emplace_back(p.mean_reward, p.success_rate);
    for (const auto& [it, pts] : by_iter) {
      std::vector<double> rewards, success;
      for (const auto& [rw, sr] : pts) {
        rewards.push_back(rw);
        success.push_back(sr);
      }
      summary << a.kind << ",\"" << v << "\"," << it << ',' << std::setprecision(17) << median(rewards) << ','
              << *std::min_element(rewards.begin(), rewards.end()) << ','
              << *std::max_element(rewards.begin(), rewards.end()) << ',' << median(success) << '\n';
    }
  }
  out << "wrote " << (dir / "summary.csv").string() << std::endl;
  return kOk;
}

// ---------------------------------------------------------------- export-value-grid

struct ExportArgs {
  std::string checkpoint;
  std::string config;
  std::string resolution = "101x101";
  std::string out = "value_grid.csv";
};

int cmd_export(const ExportArgs& a, const Common& c, std::ostream& out) {
  const auto x = a.resolution.find('x');
  int nt = 0, nv = 0;
  try {
    if (x == std::string::npos) throw std::invalid_argument("no x");
    std::size_t used = 0;
    nt = std::stoi(a.resolution.substr(0, x), &used);
    if (used != x) throw std::invalid_argument("trailing");
    nv = std::stoi(a.resolution.substr(x + 1), &used);
    if (used != a.resolution.size() - x - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ConfigError("--resolution must look like 101x101");
  }
  if (nt < 2 || nv < 2) throw ConfigError("--resolution needs at least 2 nodes per axis");
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const RunConfig cfg = checkpoint_config(ckpt, a.config, c.sets);
  const SystemSpec spec = build_system(cfg);
  const RewardSpec rs = build_reward(cfg, spec);
  const FeatureTransform ft(spec);
  const EnsembleValue value(ckpt.ensemble, ft);

  // Pendulum angle against its velocity, every other coordinate at the goal.
  const int ia = spec.pendulum_index;
  const int iv = spec.pendulum_index + static_cast<int>(spec.joints.size());
  GridValue gv;
  gv.grid.theta_nodes = nt;
  gv.grid.velocity_nodes = nv;
  gv.grid.velocity_lo = spec.domain_lo[iv];
  gv.grid.velocity_hi = spec.domain_hi[iv];
  StateBatch states(spec.state_dim, static_cast<Eigen::Index>(nt) * nv);
  for (int j = 0; j < nv; ++j) {
    for (int i = 0; i < nt; ++i) {
      State s = spec.x_des;
      s[ia] = gv.grid.theta_at(i);
      s[iv] = gv.grid.velocity_at(j);
      states.col(i + static_cast<Eigen::Index>(nt) * j) = s;
    }
  }
  Eigen::RowVectorXd v;
  const ActionBatch u = policy_batch(value, rs, spec, states, &v);
  gv.values = Eigen::Map<const Eigen::MatrixXd>(v.data(), nt, nv);
  gv.actions = Eigen::Map<const Eigen::MatrixXd>(u.row(0).eval().data(), nt, nv);

  const fs::path p = output_path(a.out);
  if (p.has_parent_path()) ensure_dir(p.parent_path());
  auto os = open_out(p);
  write_grid_csv(os, gv);
  out << "wrote " << nt * nv << " rows to " << p.string() << std::endl;
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Continuous fitted value iteration: training, evaluation and oracle tools"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--workers", common.workers, "Worker threads for rollouts and fits")->check(CLI::PositiveNumber);
    sub->add_flag("--deterministic", common.deterministic, "Single-worker mode with reproducible output files");
    sub->add_option("--set", common.sets, "Override a config key, e.g. --set target.lambda=0.5");
  };

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Run DP or RTDP cFVI from a config file");
  train_cmd->add_option("config", ta.config, "Config file")->required();
  train_cmd->add_option("--out", ta.out, "Output directory (default: output_dir of the config)");
  train_cmd->add_option("--resume", ta.resume, "Continue from a checkpoint");
  train_cmd->add_flag("--skip-eval", ta.skip_eval, "Skip the final evaluation");
  train_cmd->add_flag("--quiet", ta.quiet, "No per-iteration log");
  add_common(train_cmd);

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint with the rollout protocol");
  eval_cmd->add_option("checkpoint", ea.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--config", ea.config, "Config file (default: the one stored in the checkpoint)");
  eval_cmd->add_option("--rollouts", ea.rollouts, "Number of rollouts");
  eval_cmd->add_option("--duration", ea.duration, "Rollout duration in seconds");
  eval_cmd->add_option("--init", ea.init, "Initial distribution: downward | uniform");
  eval_cmd->add_option("--seed", ea.seed, "Seed of the initial states");
  eval_cmd->add_option("--out", ea.out, "JSON summary file (default: stdout)");
  eval_cmd->add_option("--traces", ea.traces, "Directory for per-rollout trace CSVs");
  add_common(eval_cmd);

  OracleArgs oa;
  auto* oracle_cmd = app.add_subcommand("oracle", "Tabular value iteration on the pendulum grid");
  oracle_cmd->add_option("--system", oa.system, "System id (only pendulum is supported)");
  oracle_cmd->add_option("--config", oa.config, "Config file providing the system and discount");
  oracle_cmd->add_option("--rho", oa.rho, "Discount rate (default: target.rho of the config)");
  oracle_cmd->add_option("--theta-nodes", oa.theta_nodes, "Angle nodes");
  oracle_cmd->add_option("--velocity-nodes", oa.velocity_nodes, "Velocity nodes");
  oracle_cmd->add_option("--actions", oa.actions, "Action levels");
  oracle_cmd->add_option("--tol", oa.tol, "Sup-norm tolerance");
  oracle_cmd->add_option("--max-sweeps", oa.max_sweeps, "Sweep limit");
  oracle_cmd->add_option("--out", oa.out, "Output directory");
  add_common(oracle_cmd);

  AblateArgs aa;
  auto* ablate_cmd = app.add_subcommand("ablate", "Sweep lambda, architecture or ensemble size over seeds");
  ablate_cmd->add_option("kind", aa.kind, "lambda | architecture | ensemble")->required();
  ablate_cmd->add_option("config", aa.config, "Base config file")->required();
  ablate_cmd->add_option("--values", aa.values, "Values to sweep (architecture values look like 128,128)");
  ablate_cmd->add_option("--seeds", aa.seeds, "Seeds per value");
  ablate_cmd->add_option("--out", aa.out, "Output directory");
  ablate_cmd->add_flag("--quiet", aa.quiet, "No per-iteration log");
  add_common(ablate_cmd);

  ExportArgs xa;
  auto* export_cmd = app.add_subcommand("export-value-grid", "Write V and the policy of a checkpoint on a grid");
  export_cmd->add_option("checkpoint", xa.checkpoint, "Checkpoint file")->required();
  export_cmd->add_option("--config", xa.config, "Config file (default: the one stored in the checkpoint)");
  export_cmd->add_option("--resolution", xa.resolution, "Grid size, angle x velocity");
  export_cmd->add_option("--out", xa.out, "Output CSV");
  add_common(export_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfig;
  }

  try {
    apply_common(common);
    if (*train_cmd) return cmd_train(ta, common, out);
    if (*eval_cmd) return cmd_eval(ea, common, out);
    if (*oracle_cmd) return cmd_oracle(oa, common, out);
    if (*ablate_cmd) return cmd_ablate(aa, common, out);
    if (*export_cmd) return cmd_export(xa, common, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << std::endl;
    return kConfig;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << std::endl;
    return kConfig;
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << std::endl;
    return kDivergence;
  } catch (const NonConvergenceError& e) {
    err << "not converged: " << e.what() << " (residual " << e.residual() << ")" << std::endl;
    return kNonConvergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << std::endl;
    return kConfig;
  }
  return kConfig;
}

}  // namespace cfvi::cli
