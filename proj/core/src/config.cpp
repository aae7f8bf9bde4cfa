#include "cfvi/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "cfvi/errors.hpp"

namespace cfvi {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end || !std::isfinite(out)) throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

long long to_integer(const std::string& v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("expected an integer, got '" + v + "'");
  return out;
}

int to_int(const std::string& v) {
  const long long out = to_integer(v);
  if (out < -2147483647LL || out > 2147483647LL) throw ConfigError("integer out of range: '" + v + "'");
  return static_cast<int>(out);
}

Eigen::VectorXd to_vector(const std::string& v) {
  std::vector<double> items;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) items.push_back(to_double(trim(item)));
  if (items.empty()) throw ConfigError("expected a comma-separated list of numbers");
  return Eigen::Map<Eigen::VectorXd>(items.data(), static_cast<Eigen::Index>(items.size()));
}

std::vector<int> to_int_list(const std::string& v) {
  std::vector<int> items;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) items.push_back(to_int(trim(item)));
  if (items.empty()) throw ConfigError("expected a comma-separated list of integers");
  return items;
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fmt(const Eigen::VectorXd& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) out += (i ? ", " : "") + fmt(v[i]);
  return out;
}

std::string fmt(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + std::to_string(v[i]);
  return out;
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
  std::string system;  // non-empty: only meaningful for this system
};

// Value of an optional vector key, or the default of the built system.
std::string vector_or(const std::optional<Eigen::VectorXd>& v, const RunConfig& cfg,
                      Eigen::VectorXd (*pick)(const SystemSpec&, const RewardSpec&)) {
  if (v) return fmt(*v);
  const SystemSpec spec = build_system(cfg);
  return fmt(pick(spec, build_reward(cfg, spec)));
}

#define CFVI_DOUBLE(key, member)                                                     \
  Key {                                                                              \
    key, [](RunConfig& c, const std::string& v) { c.member = to_double(v); },        \
        [](const RunConfig& c) { return fmt(static_cast<double>(c.member)); }, ""    \
  }
#define CFVI_INT(key, member)                                                        \
  Key {                                                                              \
    key, [](RunConfig& c, const std::string& v) { c.member = to_int(v); },           \
        [](const RunConfig& c) { return std::to_string(c.member); }, ""              \
  }
#define CFVI_PARAM(sys, member)                                                           \
  Key {                                                                                   \
    #sys "." #member, [](RunConfig& c, const std::string& v) { c.sys.member = to_double(v); }, \
        [](const RunConfig& c) { return fmt(c.sys.member); }, #sys                        \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      {"system", [](RunConfig& c, const std::string& v) { c.system = v; },
       [](const RunConfig& c) { return c.system; }, ""},
      {"mode", [](RunConfig& c, const std::string& v) { c.train.mode = parse_mode(v); },
       [](const RunConfig& c) { return to_string(c.train.mode); }, ""},
      {"seed", [](RunConfig& c, const std::string& v) {
         const long long s = to_integer(v);
         if (s < 0) throw ConfigError("seed must be >= 0");
         c.train.seed = static_cast<std::uint64_t>(s);
       },
       [](const RunConfig& c) { return std::to_string(c.train.seed); }, ""},
      {"output_dir", [](RunConfig& c, const std::string& v) { c.output_dir = v; },
       [](const RunConfig& c) { return c.output_dir; }, ""},
      CFVI_INT("checkpoint_every", checkpoint_every),

      CFVI_DOUBLE("system.sim_dt", sim_dt),
      CFVI_INT("system.control_substeps", control_substeps),
      {"system.u_max", [](RunConfig& c, const std::string& v) { c.u_max = to_vector(v); },
       [](const RunConfig& c) {
         return vector_or(c.u_max, c, [](const SystemSpec& s, const RewardSpec&) { return s.u_max; });
       }, ""},
      {"system.domain_lo", [](RunConfig& c, const std::string& v) { c.domain_lo = to_vector(v); },
       [](const RunConfig& c) {
         return vector_or(c.domain_lo, c, [](const SystemSpec& s, const RewardSpec&) { return s.domain_lo; });
       }, ""},
      {"system.domain_hi", [](RunConfig& c, const std::string& v) { c.domain_hi = to_vector(v); },
       [](const RunConfig& c) {
         return vector_or(c.domain_hi, c, [](const SystemSpec& s, const RewardSpec&) { return s.domain_hi; });
       }, ""},

      CFVI_PARAM(pendulum, mass),
      CFVI_PARAM(pendulum, length),
      CFVI_PARAM(pendulum, gravity),
      CFVI_PARAM(pendulum, damping),
      CFVI_PARAM(cartpole, cart_mass),
      CFVI_PARAM(cartpole, pole_mass),
      CFVI_PARAM(cartpole, pole_length),
      CFVI_PARAM(cartpole, gravity),
      CFVI_PARAM(cartpole, cart_damping),
      CFVI_PARAM(cartpole, pole_damping),
      CFVI_PARAM(furuta, arm_mass),
      CFVI_PARAM(furuta, arm_length),
      CFVI_PARAM(furuta, pole_mass),
      CFVI_PARAM(furuta, pole_length),
      CFVI_PARAM(furuta, gravity),
      CFVI_PARAM(furuta, arm_damping),
      CFVI_PARAM(furuta, pole_damping),

      {"reward.q", [](RunConfig& c, const std::string& v) { c.reward_q = to_vector(v); },
       [](const RunConfig& c) {
         return vector_or(c.reward_q, c, [](const SystemSpec&, const RewardSpec& r) { return r.q_diag; });
       }, ""},
      {"reward.beta", [](RunConfig& c, const std::string& v) { c.reward_beta = to_double(v); },
       [](const RunConfig& c) {
         if (c.reward_beta) return fmt(*c.reward_beta);
         const SystemSpec spec = build_system(c);
         return fmt(build_reward(c, spec).action_cost_beta);
       }, ""},

      CFVI_DOUBLE("target.rho", train.target.rho),
      {"target.lambda", [](RunConfig& c, const std::string& v) { c.lambda = to_double(v); },
       [](const RunConfig& c) {
         return fmt(c.lambda ? *c.lambda : (c.train.mode == TrainMode::DP ? 0.9 : 0.5));
       }, ""},
      CFVI_DOUBLE("target.cutoff_weight", train.target.cutoff_weight),

      {"fit.objective", [](RunConfig& c, const std::string& v) { c.train.fit.objective = parse_fit_objective(v); },
       [](const RunConfig& c) { return to_string(c.train.fit.objective); }, ""},
      CFVI_INT("fit.epochs", train.fit.epochs),
      CFVI_INT("fit.minibatch", train.fit.minibatch),
      CFVI_DOUBLE("fit.learning_rate", train.fit.learning_rate),
      CFVI_DOUBLE("fit.loss_tolerance", train.fit.loss_tolerance),

      {"ensemble.hidden", [](RunConfig& c, const std::string& v) { c.train.ensemble.hidden = to_int_list(v); },
       [](const RunConfig& c) { return fmt(c.train.ensemble.hidden); }, ""},
      {"ensemble.activation",
       [](RunConfig& c, const std::string& v) { c.train.ensemble.activation = parse_activation(v); },
       [](const RunConfig& c) { return to_string(c.train.ensemble.activation); }, ""},
      CFVI_INT("ensemble.members", train.ensemble.members),
      CFVI_DOUBLE("ensemble.diag_floor", train.ensemble.diag_floor),

      CFVI_INT("train.iterations", train.iterations),
      CFVI_INT("train.dataset_size", train.dataset_size),
      CFVI_INT("train.buffer_capacity", train.buffer_capacity),
      CFVI_INT("train.rollouts_per_iter", train.rollouts_per_iter),
      CFVI_INT("train.episode_steps", train.episode_steps),
      CFVI_DOUBLE("train.exploration_noise", train.exploration_noise),
      CFVI_DOUBLE("train.max_invalid_fraction", train.max_invalid_fraction),
      CFVI_INT("train.eval_every", train.eval_every),
      CFVI_INT("train.eval_rollouts", train.eval_rollouts),
      CFVI_DOUBLE("train.stop_success_rate", train.stop_success_rate),

      CFVI_INT("eval.n_rollouts", eval.n_rollouts),
      CFVI_DOUBLE("eval.duration", eval.duration),
      {"eval.init", [](RunConfig& c, const std::string& v) { c.eval.init = parse_init(v); },
       [](const RunConfig& c) { return to_string(c.eval.init); }, ""},
      CFVI_DOUBLE("eval.success_window", eval.success_window),
      {"eval.success_angle_deg",
       [](RunConfig& c, const std::string& v) { c.eval.success_angle = to_double(v) * kPi / 180.0; },
       [](const RunConfig& c) { return fmt(c.eval.success_angle * 180.0 / kPi); }, ""},
      CFVI_DOUBLE("eval.init_jitter", eval.init_jitter),
  };
  return table;
}

#undef CFVI_DOUBLE
#undef CFVI_INT
#undef CFVI_PARAM

const Key& find_key(std::string_view name) {
  for (const auto& k : keys())
    if (k.name == name) return k;
  throw ConfigError("unknown key '" + std::string(name) + "'");
}

std::string assign(RunConfig& cfg, std::string_view line) {
  const auto eq = line.find('=');
  if (eq == std::string_view::npos) throw ConfigError("expected 'key = value'");
  const std::string key = trim(line.substr(0, eq));
  const std::string value = trim(line.substr(eq + 1));
  if (key.empty()) throw ConfigError("missing key before '='");
  if (value.empty()) throw ConfigError("missing value for '" + key + "'");
  const Key& k = find_key(key);
  try {
    k.set(cfg, value);
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
  return key;
}

void check_params(const RunConfig& c) {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) throw ConfigError(std::string(name) + " must be positive");
  };
  auto non_negative = [](double v, const char* name) {
    if (!(v >= 0.0)) throw ConfigError(std::string(name) + " must be >= 0");
  };
  if (c.system == "pendulum") {
    positive(c.pendulum.mass, "pendulum.mass");
    positive(c.pendulum.length, "pendulum.length");
    positive(c.pendulum.gravity, "pendulum.gravity");
    non_negative(c.pendulum.damping, "pendulum.damping");
  } else if (c.system == "cartpole") {
    positive(c.cartpole.cart_mass, "cartpole.cart_mass");
    positive(c.cartpole.pole_mass, "cartpole.pole_mass");
    positive(c.cartpole.pole_length, "cartpole.pole_length");
    positive(c.cartpole.gravity, "cartpole.gravity");
    non_negative(c.cartpole.cart_damping, "cartpole.cart_damping");
    non_negative(c.cartpole.pole_damping, "cartpole.pole_damping");
  } else if (c.system == "furuta") {
    positive(c.furuta.arm_mass, "furuta.arm_mass");
    positive(c.furuta.arm_length, "furuta.arm_length");
    positive(c.furuta.pole_mass, "furuta.pole_mass");
    positive(c.furuta.pole_length, "furuta.pole_length");
    positive(c.furuta.gravity, "furuta.gravity");
    non_negative(c.furuta.arm_damping, "furuta.arm_damping");
    non_negative(c.furuta.pole_damping, "furuta.pole_damping");
  }
}

}  // namespace

void RunConfig::finalize() {
  train.target.lambda = lambda ? *lambda : (train.mode == TrainMode::DP ? 0.9 : 0.5);
  if (!(sim_dt > 0.0)) throw ConfigError("system.sim_dt must be positive");
  if (control_substeps < 1) throw ConfigError("system.control_substeps must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  check_params(*this);
  const SystemSpec spec = build_system(*this);
  train.target.dt = spec.control_dt();
  train.eval = eval;
  train.eval.rho = train.target.rho;
  eval.rho = train.target.rho;
  build_reward(*this, spec).validate();
  train.validate();
  eval.validate();
}

RunConfig parse_config(std::string_view text, const std::string& source) {
  RunConfig cfg;
  std::vector<std::string> seen;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    if (trim(line).empty()) continue;
    try {
      const std::string key = assign(cfg, line);
      if (std::find(seen.begin(), seen.end(), key) != seen.end()) throw ConfigError("duplicate key '" + key + "'");
      seen.push_back(key);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

void apply_override(RunConfig& cfg, std::string_view assignment) {
  try {
    assign(cfg, assignment);
  } catch (const ConfigError& e) {
    throw ConfigError("--set " + std::string(assignment) + ": " + e.what());
  }
}

std::string resolved_config(const RunConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& k : keys()) {
    if (!k.system.empty() && k.system != cfg.system) continue;
    const auto dot = k.name.find('.');
    const std::string sec = dot == std::string::npos ? std::string() : k.name.substr(0, dot);
    if (sec != section && !out.empty()) out += '\n';
    section = sec;
    out += k.name + " = " + k.get(cfg) + '\n';
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : keys()) out.push_back(k.name);
  return out;
}

SystemSpec build_system(const RunConfig& cfg) {
  SystemSpec spec;
  if (cfg.system == "pendulum") {
    spec = make_pendulum(cfg.pendulum);
  } else if (cfg.system == "cartpole") {
    spec = make_cartpole(cfg.cartpole);
  } else if (cfg.system == "furuta") {
    spec = make_furuta(cfg.furuta);
  } else {
    throw ConfigError("unknown system '" + cfg.system + "' (expected pendulum | cartpole | furuta)");
  }
  spec.sim_dt = cfg.sim_dt;
  spec.control_substeps = cfg.control_substeps;
  auto override = [](Eigen::VectorXd& dst, const std::optional<Eigen::VectorXd>& src, const char* name) {
    if (!src) return;
    if (src->size() != dst.size())
      throw ConfigError(std::string(name) + " needs " + std::to_string(dst.size()) + " entries");
    dst = *src;
  };
  override(spec.u_max, cfg.u_max, "system.u_max");
  override(spec.domain_lo, cfg.domain_lo, "system.domain_lo");
  override(spec.domain_hi, cfg.domain_hi, "system.domain_hi");
  try {
    spec.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
  return spec;
}

RewardSpec build_reward(const RunConfig& cfg, const SystemSpec& spec) {
  RewardSpec rs = make_reward(spec);
  if (cfg.reward_q) {
    if (cfg.reward_q->size() != rs.q_diag.size())
      throw ConfigError("reward.q needs " + std::to_string(rs.q_diag.size()) + " entries");
    rs.q_diag = *cfg.reward_q;
  }
  if (cfg.reward_beta) rs.action_cost_beta = *cfg.reward_beta;
  try {
    rs.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
  return rs;
}

}  // namespace cfvi
