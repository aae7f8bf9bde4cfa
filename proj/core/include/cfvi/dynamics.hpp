#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "cfvi/types.hpp"

namespace cfvi {

/// Drift a(x) and control matrix B(x) of xdot = a(x) + B(x) u.
struct AffineDerivative {
  Eigen::VectorXd drift;
  Eigen::MatrixXd control;  // state_dim x action_dim

  Eigen::VectorXd apply(const Eigen::Ref<const Eigen::VectorXd>& u) const { return drift + control * u; }
};

enum class Joint { Revolute, Prismatic };

/// Point-mass pendulum, theta = 0 upright.
struct PendulumParams {
  double mass = 1.0;     // kg
  double length = 1.0;   // m
  double gravity = 9.81; // m/s^2
  double damping = 0.1;  // N m s
};

/// Cart with a point-mass pole, state [x, theta, xdot, thetadot], theta = 0 upright.
struct CartpoleParams {
  double cart_mass = 0.57;     // kg
  double pole_mass = 0.127;    // kg
  double pole_length = 0.336;  // m, pivot to point mass
  double gravity = 9.81;
  double cart_damping = 0.1;   // N s/m
  double pole_damping = 1e-3;  // N m s
};

/// Rotary (Furuta) pendulum with uniform-rod arm and pendulum,
/// state [arm, alpha, armdot, alphadot], alpha = 0 upright.
struct FurutaParams {
  double arm_mass = 0.095;       // kg
  double arm_length = 0.085;     // m
  double pole_mass = 0.024;      // kg
  double pole_length = 0.129;    // m, full rod length
  double gravity = 9.81;
  double arm_damping = 5e-4;     // N m s
  double pole_damping = 5e-5;    // N m s
};

/// User-supplied control-affine model (used for toy systems in tests and examples).
struct CustomDynamics {
  std::function<AffineDerivative(const State&)> model;
};

using SystemParams = std::variant<PendulumParams, CartpoleParams, FurutaParams, CustomDynamics>;

struct SystemSpec {
  std::string id;
  int state_dim = 0;
  int action_dim = 0;
  /// One entry per position coordinate; the state is [positions, velocities].
  std::vector<Joint> joints;
  Eigen::VectorXd u_max;
  State x_des;
  SystemParams params;
  double sim_dt = 1.0 / 500.0;
  /// Simulation steps per control step; the control period is sim_dt * control_substeps.
  int control_substeps = 5;
  Eigen::VectorXd domain_lo;
  Eigen::VectorXd domain_hi;
  /// State index of the pendulum angle used by the success criterion.
  int pendulum_index = 0;

  double control_dt() const { return sim_dt * control_substeps; }
  /// Throws ContractViolation if dimensions or bounds are inconsistent.
  void validate() const;
};

SystemSpec make_pendulum(const PendulumParams& p = {});
SystemSpec make_cartpole(const CartpoleParams& p = {});
SystemSpec make_furuta(const FurutaParams& p = {});
/// "pendulum" | "cartpole" | "furuta"; throws ConfigError otherwise.
SystemSpec make_system(std::string_view id);

AffineDerivative affine_derivative(const SystemSpec& spec, const State& x);

/// Wraps the revolute position coordinates of x into (-pi, pi] in place.
void wrap_state(const SystemSpec& spec, Eigen::Ref<Eigen::VectorXd> x);

/// One explicit Euler step x + dt (a(x) + B(x) u), with angles wrapped.
/// Throws IntegrationBlowup on a non-finite result.
State euler_step(const SystemSpec& spec, const State& x, const Action& u, double dt);

/// Holds u for one control period, integrating with control_substeps Euler steps of sim_dt.
State control_step(const SystemSpec& spec, const State& x, const Action& u);
/// Unchecked in-place variant of control_step for batched rollouts; returns false on blowup.
bool control_step_inplace(const SystemSpec& spec, Eigen::Ref<Eigen::VectorXd> x,
                          const Eigen::Ref<const Eigen::VectorXd>& u) noexcept;

/// Column-wise B(x_j)^T w_j, i.e. the control-space projection of state-space covectors
/// (value gradients). Result is action_dim x cols.
Eigen::MatrixXd project_on_controls(const SystemSpec& spec, const Eigen::Ref<const StateBatch>& x,
                                    const Eigen::Ref<const Eigen::MatrixXd>& w);

/// n i.i.d. uniform samples in [domain_lo, domain_hi], one per column.
StateBatch sample_domain(const SystemSpec& spec, int n, Rng& rng);
StateBatch sample_domain(const SystemSpec& spec, int n, std::uint64_t seed);

}  // namespace cfvi
