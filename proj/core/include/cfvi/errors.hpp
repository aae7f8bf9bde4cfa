#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace cfvi {

/// Precondition or shape violation at an API boundary.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Action outside the open barrier box.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Invalid or inconsistent configuration (unknown keys, bad values, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An explicit Euler step produced a non-finite state.
class IntegrationBlowup : public std::runtime_error {
 public:
  IntegrationBlowup(const std::string& what, Eigen::VectorXd state)
      : std::runtime_error(what), state_(std::move(state)) {}
  const Eigen::VectorXd& state() const noexcept { return state_; }

 private:
  Eigen::VectorXd state_;
};

/// Non-finite fitting loss, or too many invalid value targets.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::ptrdiff_t minibatch = -1)
      : std::runtime_error(what), minibatch_(minibatch) {}
  std::ptrdiff_t minibatch() const noexcept { return minibatch_; }

 private:
  std::ptrdiff_t minibatch_;
};

/// Grid value iteration ran out of sweeps.
class NonConvergenceError : public std::runtime_error {
 public:
  NonConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Unreadable, tampered or incompatible checkpoint.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cfvi
