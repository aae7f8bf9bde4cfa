#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "cfvi/types.hpp"

namespace cfvi {

enum class Activation { Tanh, Softplus, Relu };

Activation parse_activation(std::string_view name);
std::string to_string(Activation a);
/// Gradients of the value function must exist everywhere.
inline bool is_smooth(Activation a) { return a != Activation::Relu; }

/// Fully connected network with a linear output layer.
struct NetworkArch {
  int input_dim = 0;
  std::vector<int> hidden{128, 128};
  int output_dim = 0;
  Activation activation = Activation::Tanh;

  bool operator==(const NetworkArch&) const = default;
};

/// Per-layer activations kept from a forward pass for the backward passes.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> pre;   // pre-activation of each hidden layer
  std::vector<Eigen::MatrixXd> post;  // activation of each hidden layer
  Eigen::MatrixXd output;
  // scratch for the backward passes, kept to avoid reallocating per call
  Eigen::MatrixXd delta, delta_prev;
};

struct MlpGradient {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
};

/// Plain multilayer perceptron over column batches, with hand-written backward passes.
class Mlp {
 public:
  Mlp() = default;
  /// Uniform fan-in initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Mlp(const NetworkArch& arch, Rng& rng);

  const NetworkArch& arch() const { return arch_; }
  std::size_t parameter_count() const;

  /// Forward pass; `in` has input_dim rows and one column per sample.
  void forward(const Eigen::Ref<const Eigen::MatrixXd>& in, ForwardCache& cache) const;
  /// Output only, without keeping intermediate activations.
  Eigen::MatrixXd predict(const Eigen::Ref<const Eigen::MatrixXd>& in) const;

  /// d(loss)/d(input) given d(loss)/d(output) for the cached forward pass.
  void backward_input(ForwardCache& cache, const Eigen::Ref<const Eigen::MatrixXd>& d_out,
                      Eigen::MatrixXd& d_in) const;
  Eigen::MatrixXd backward_input(ForwardCache& cache, const Eigen::Ref<const Eigen::MatrixXd>& d_out) const {
    Eigen::MatrixXd d_in;
    backward_input(cache, d_out, d_in);
    return d_in;
  }
  /// Parameter gradient, summed over the batch columns.
  void backward_params(const Eigen::Ref<const Eigen::MatrixXd>& in, ForwardCache& cache,
                       const Eigen::Ref<const Eigen::MatrixXd>& d_out, MlpGradient& grad) const;

  std::vector<Eigen::MatrixXd>& weights() { return w_; }
  std::vector<Eigen::VectorXd>& biases() { return b_; }
  const std::vector<Eigen::MatrixXd>& weights() const { return w_; }
  const std::vector<Eigen::VectorXd>& biases() const { return b_; }

  /// Flat parameter vector (layer by layer, weights column-major then bias).
  std::vector<double> flatten() const;
  void unflatten(const std::vector<double>& params);

 private:
  NetworkArch arch_;
  std::vector<Eigen::MatrixXd> w_;
  std::vector<Eigen::VectorXd> b_;
};

/// Adam optimiser state for one Mlp.
class Adam {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  Adam(const Mlp& net, Options opt);
  void step(Mlp& net, const MlpGradient& grad);

 private:
  Options opt_;
  long t_ = 0;
  std::vector<Eigen::MatrixXd> mw_, vw_;
  std::vector<Eigen::VectorXd> mb_, vb_;
};

}  // namespace cfvi
