#include "cfvi/dynamics.hpp"

#include <cmath>
#include <sstream>
#include <type_traits>
#include <variant>

#include "cfvi/errors.hpp"

namespace cfvi {

namespace {

using SmallVec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, 8, 1>;
using SmallMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, 8, 4>;

template <typename Vec, typename Mat>
void pendulum_model(const PendulumParams& p, const double* x, Vec& a, Mat& b) {
  const double inertia = p.mass * p.length * p.length;
  a.resize(2);
  b.resize(2, 1);
  a[0] = x[1];
  a[1] = (p.mass * p.gravity * p.length * std::sin(x[0]) - p.damping * x[1]) / inertia;
  b(0, 0) = 0.0;
  b(1, 0) = 1.0 / inertia;
}

// Lagrangian of a cart (mass M) carrying a point mass m at distance l, theta from upright:
//   [M + m, m l c; m l c, m l^2] [xdd; thdd] = [F + m l s thd^2 - dc xd; m g l s - dp thd]
template <typename Vec, typename Mat>
void cartpole_model(const CartpoleParams& p, const double* x, Vec& a, Mat& b) {
  const double s = std::sin(x[1]);
  const double c = std::cos(x[1]);
  const double m = p.pole_mass;
  const double l = p.pole_length;
  const double m11 = p.cart_mass + m;
  const double m12 = m * l * c;
  const double m22 = m * l * l;
  const double det = m11 * m22 - m12 * m12;
  const double h1 = m * l * s * x[3] * x[3] - p.cart_damping * x[2];
  const double h2 = m * p.gravity * l * s - p.pole_damping * x[3];
  a.resize(4);
  b.resize(4, 1);
  a[0] = x[2];
  a[1] = x[3];
  a[2] = (m22 * h1 - m12 * h2) / det;
  a[3] = (-m12 * h1 + m11 * h2) / det;
  b(0, 0) = 0.0;
  b(1, 0) = 0.0;
  b(2, 0) = m22 / det;
  b(3, 0) = -m12 / det;
}

// Arm angle th about the vertical axis, pendulum angle al from upright, both uniform rods.
//   M11 = Jr + mp Lr^2 + Jh s^2, M12 = mp Lr lp c, M22 = Jh  (Jh = Jp + mp lp^2)
//   row 1: M11 thdd + M12 aldd = tau - dr thd - 2 Jh s c thd ald + mp Lr lp s ald^2
//   row 2: M12 thdd + M22 aldd = mp g lp s + Jh s c thd^2 - dp ald
template <typename Vec, typename Mat>
void furuta_model(const FurutaParams& p, const double* x, Vec& a, Mat& b) {
  const double s = std::sin(x[1]);
  const double c = std::cos(x[1]);
  const double lp = 0.5 * p.pole_length;
  const double jp = p.pole_mass * p.pole_length * p.pole_length / 12.0;
  const double jr = p.arm_mass * p.arm_length * p.arm_length / 3.0;
  const double jh = jp + p.pole_mass * lp * lp;
  const double coupling = p.pole_mass * p.arm_length * lp;
  const double m11 = jr + p.pole_mass * p.arm_length * p.arm_length + jh * s * s;
  const double m12 = coupling * c;
  const double m22 = jh;
  const double det = m11 * m22 - m12 * m12;
  const double thd = x[2];
  const double ald = x[3];
  const double h1 = -p.arm_damping * thd - 2.0 * jh * s * c * thd * ald + coupling * s * ald * ald;
  const double h2 = p.pole_mass * p.gravity * lp * s + jh * s * c * thd * thd - p.pole_damping * ald;
  a.resize(4);
  b.resize(4, 1);
  a[0] = thd;
  a[1] = ald;
  a[2] = (m22 * h1 - m12 * h2) / det;
  a[3] = (-m12 * h1 + m11 * h2) / det;
  b(0, 0) = 0.0;
  b(1, 0) = 0.0;
  b(2, 0) = m22 / det;
  b(3, 0) = -m12 / det;
}

template <typename Vec, typename Mat>
void model(const SystemSpec& spec, const double* x, Vec& a, Mat& b) {
  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, PendulumParams>) {
          pendulum_model(p, x, a, b);
        } else if constexpr (std::is_same_v<P, CartpoleParams>) {
          cartpole_model(p, x, a, b);
        } else if constexpr (std::is_same_v<P, FurutaParams>) {
          furuta_model(p, x, a, b);
        } else {
          const AffineDerivative d = p.model(Eigen::Map<const State>(x, spec.state_dim));
          a = d.drift;
          b = d.control;
        }
      },
      spec.params);
}

void check_state(const SystemSpec& spec, const State& x) {
  if (x.size() != spec.state_dim) {
    std::ostringstream os;
    os << spec.id << ": state has dimension " << x.size() << ", expected " << spec.state_dim;
    throw ContractViolation(os.str());
  }
}

void check_action(const SystemSpec& spec, const Action& u) {
  if (u.size() != spec.action_dim) {
    std::ostringstream os;
    os << spec.id << ": action has dimension " << u.size() << ", expected " << spec.action_dim;
    throw ContractViolation(os.str());
  }
  for (int i = 0; i < u.size(); ++i) {
    if (!(std::abs(u[i]) <= spec.u_max[i])) {
      std::ostringstream os;
      os << spec.id << ": action " << u[i] << " exceeds bound " << spec.u_max[i];
      throw ContractViolation(os.str());
    }
  }
}

SystemSpec base_spec(std::string id, std::vector<Joint> joints, int action_dim) {
  SystemSpec s;
  s.id = std::move(id);
  s.joints = std::move(joints);
  s.state_dim = static_cast<int>(2 * s.joints.size());
  s.action_dim = action_dim;
  s.x_des = State::Zero(s.state_dim);
  return s;
}

}  // namespace

void SystemSpec::validate() const {
  auto fail = [&](const std::string& msg) { throw ContractViolation(id + ": " + msg); };
  if (state_dim <= 0 || action_dim <= 0) fail("dimensions must be positive");
  if (static_cast<int>(joints.size()) * 2 != state_dim) fail("state must be [positions, velocities]");
  if (u_max.size() != action_dim) fail("u_max has wrong dimension");
  if ((u_max.array() <= 0.0).any()) fail("u_max must be positive");
  if (x_des.size() != state_dim) fail("x_des has wrong dimension");
  if (!(sim_dt > 0.0)) fail("sim_dt must be positive");
  if (control_substeps < 1) fail("control_substeps must be >= 1");
  if (domain_lo.size() != state_dim || domain_hi.size() != state_dim) fail("domain bounds have wrong dimension");
  if ((domain_lo.array() >= domain_hi.array()).any()) fail("domain_lo must be < domain_hi");
  if (pendulum_index < 0 || pendulum_index >= state_dim) fail("pendulum_index out of range");
}

SystemSpec make_pendulum(const PendulumParams& p) {
  SystemSpec s = base_spec("pendulum", {Joint::Revolute}, 1);
  s.params = p;
  s.u_max = Eigen::VectorXd::Constant(1, 2.5);
  s.domain_lo = (Eigen::VectorXd(2) << -kPi, -8.0).finished();
  s.domain_hi = (Eigen::VectorXd(2) << kPi, 8.0).finished();
  s.pendulum_index = 0;
  return s;
}

SystemSpec make_cartpole(const CartpoleParams& p) {
  SystemSpec s = base_spec("cartpole", {Joint::Prismatic, Joint::Revolute}, 1);
  s.params = p;
  s.u_max = Eigen::VectorXd::Constant(1, 5.0);
  s.domain_lo = (Eigen::VectorXd(4) << -0.4, -kPi, -3.0, -12.0).finished();
  s.domain_hi = (Eigen::VectorXd(4) << 0.4, kPi, 3.0, 12.0).finished();
  s.pendulum_index = 1;
  return s;
}

SystemSpec make_furuta(const FurutaParams& p) {
  SystemSpec s = base_spec("furuta", {Joint::Revolute, Joint::Revolute}, 1);
  s.params = p;
  s.u_max = Eigen::VectorXd::Constant(1, 2.0);
  s.domain_lo = (Eigen::VectorXd(4) << -kPi, -kPi, -20.0, -40.0).finished();
  s.domain_hi = (Eigen::VectorXd(4) << kPi, kPi, 20.0, 40.0).finished();
  s.pendulum_index = 1;
  return s;
}

SystemSpec make_system(std::string_view id) {
  if (id == "pendulum") return make_pendulum();
  if (id == "cartpole") return make_cartpole();
  if (id == "furuta") return make_furuta();
  throw ConfigError("unknown system '" + std::string(id) + "' (expected pendulum | cartpole | furuta)");
}

AffineDerivative affine_derivative(const SystemSpec& spec, const State& x) {
  check_state(spec, x);
  if (!x.allFinite()) throw ContractViolation(spec.id + ": state must be finite");
  AffineDerivative d;
  model(spec, x.data(), d.drift, d.control);
  if (d.drift.size() != spec.state_dim || d.control.rows() != spec.state_dim ||
      d.control.cols() != spec.action_dim)
    throw ContractViolation(spec.id + ": model returned inconsistent shapes");
  return d;
}

void wrap_state(const SystemSpec& spec, Eigen::Ref<Eigen::VectorXd> x) {
  for (std::size_t i = 0; i < spec.joints.size(); ++i)
    if (spec.joints[i] == Joint::Revolute) x[static_cast<Eigen::Index>(i)] = wrap_angle(x[static_cast<Eigen::Index>(i)]);
}

namespace {

// Allocation-free Euler integration; returns false as soon as the state turns non-finite.
bool integrate(const SystemSpec& spec, double* x, const double* u, double dt, int steps) {
  const int n = spec.state_dim;
  const int m = spec.action_dim;
  SmallVec a(n);
  SmallMat b(n, m);
  for (int k = 0; k < steps; ++k) {
    model(spec, x, a, b);
    for (int i = 0; i < n; ++i) {
      double xd = a[i];
      for (int j = 0; j < m; ++j) xd += b(i, j) * u[j];
      x[i] += dt * xd;
    }
    for (std::size_t i = 0; i < spec.joints.size(); ++i)
      if (spec.joints[i] == Joint::Revolute) x[i] = wrap_angle(x[i]);
    for (int i = 0; i < n; ++i)
      if (!std::isfinite(x[i])) return false;
  }
  return true;
}

}  // namespace

State euler_step(const SystemSpec& spec, const State& x, const Action& u, double dt) {
  check_state(spec, x);
  check_action(spec, u);
  if (!(dt > 0.0)) throw ContractViolation("euler_step: dt must be positive");
  State out = x;
  if (!integrate(spec, out.data(), u.data(), dt, 1))
    throw IntegrationBlowup(spec.id + ": non-finite state after Euler step", x);
  return out;
}

bool control_step_inplace(const SystemSpec& spec, Eigen::Ref<Eigen::VectorXd> x,
                          const Eigen::Ref<const Eigen::VectorXd>& u) noexcept {
  return integrate(spec, x.data(), u.data(), spec.sim_dt, spec.control_substeps);
}

State control_step(const SystemSpec& spec, const State& x, const Action& u) {
  check_state(spec, x);
  check_action(spec, u);
  State out = x;
  if (!control_step_inplace(spec, out, u))
    throw IntegrationBlowup(spec.id + ": non-finite state during control step", x);
  return out;
}

Eigen::MatrixXd project_on_controls(const SystemSpec& spec, const Eigen::Ref<const StateBatch>& x,
                                    const Eigen::Ref<const Eigen::MatrixXd>& w) {
  if (x.rows() != spec.state_dim || w.rows() != spec.state_dim || w.cols() != x.cols())
    throw ContractViolation("project_on_controls: dimension mismatch");
  Eigen::MatrixXd out(spec.action_dim, x.cols());
  SmallVec a(spec.state_dim);
  SmallMat b(spec.state_dim, spec.action_dim);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    model(spec, x.col(j).data(), a, b);
    out.col(j) = b.transpose() * w.col(j);
  }
  return out;
}

StateBatch sample_domain(const SystemSpec& spec, int n, Rng& rng) {
  if (n <= 0) throw ContractViolation("sample_domain: n must be positive");
  StateBatch out(spec.state_dim, n);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < spec.state_dim; ++i)
      out(i, j) = spec.domain_lo[i] + (spec.domain_hi[i] - spec.domain_lo[i]) * unit(rng);
  return out;
}

StateBatch sample_domain(const SystemSpec& spec, int n, std::uint64_t seed) {
  Rng rng(seed);
  return sample_domain(spec, n, rng);
}

}  // namespace cfvi
