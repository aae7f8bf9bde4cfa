#include "cfvi/network.hpp"

#include <cmath>

#include "cfvi/errors.hpp"

namespace cfvi {

Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "softplus") return Activation::Softplus;
  if (name == "relu") return Activation::Relu;
  throw ConfigError("unknown activation '" + std::string(name) + "' (expected tanh | softplus | relu)");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Softplus: return "softplus";
    case Activation::Relu: return "relu";
  }
  return "?";
}

namespace {

// tanh(x) = 1 - 2 / (exp(2x) + 1): vectorised exp, absolute error ~1e-16.
void activate(Activation act, const Eigen::MatrixXd& pre, Eigen::MatrixXd& post) {
  switch (act) {
    case Activation::Tanh:
      post = 1.0 - 2.0 / ((2.0 * pre.array()).exp() + 1.0);
      break;
    case Activation::Softplus:
      // log(1 + e^x) = max(x, 0) + log1p(e^-|x|)
      post = pre.array().max(0.0) + (-pre.array().abs()).exp().log1p();
      break;
    case Activation::Relu:
      post = pre.array().max(0.0);
      break;
  }
}

// Multiplies `d` in place by the activation derivative.
void activation_backward(Activation act, const Eigen::MatrixXd& pre, const Eigen::MatrixXd& post,
                         Eigen::MatrixXd& d) {
  switch (act) {
    case Activation::Tanh:
      d.array() *= 1.0 - post.array().square();
      break;
    case Activation::Softplus:
      d.array() *= 1.0 / (1.0 + (-pre.array()).exp());
      break;
    case Activation::Relu:
      d.array() *= (pre.array() > 0.0).cast<double>();
      break;
  }
}

}  // namespace

Mlp::Mlp(const NetworkArch& arch, Rng& rng) : arch_(arch) {
  if (arch.input_dim <= 0 || arch.output_dim <= 0) throw ContractViolation("Mlp: dimensions must be positive");
  std::vector<int> sizes{arch.input_dim};
  for (const int h : arch.hidden) {
    if (h <= 0) throw ContractViolation("Mlp: hidden sizes must be positive");
    sizes.push_back(h);
  }
  sizes.push_back(arch.output_dim);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes[l]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Eigen::MatrixXd w(sizes[l + 1], sizes[l]);
    Eigen::VectorXd b(sizes[l + 1]);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = dist(rng);
    w_.push_back(std::move(w));
    b_.push_back(std::move(b));
  }
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < w_.size(); ++l) n += static_cast<std::size_t>(w_[l].size() + b_[l].size());
  return n;
}

void Mlp::forward(const Eigen::Ref<const Eigen::MatrixXd>& in, ForwardCache& cache) const {
  const std::size_t hidden = w_.size() - 1;
  cache.pre.resize(hidden);
  cache.post.resize(hidden);
  for (std::size_t l = 0; l < hidden; ++l) {
    auto& pre = cache.pre[l];
    if (l == 0) {
      pre.noalias() = w_[0] * in;
    } else {
      pre.noalias() = w_[l] * cache.post[l - 1];
    }
    pre.colwise() += b_[l];
    activate(arch_.activation, pre, cache.post[l]);
  }
  if (hidden == 0) {
    cache.output.noalias() = w_[0] * in;
  } else {
    cache.output.noalias() = w_[hidden] * cache.post[hidden - 1];
  }
  cache.output.colwise() += b_[hidden];
}

Eigen::MatrixXd Mlp::predict(const Eigen::Ref<const Eigen::MatrixXd>& in) const {
  ForwardCache cache;
  forward(in, cache);
  return std::move(cache.output);
}

void Mlp::backward_input(ForwardCache& cache, const Eigen::Ref<const Eigen::MatrixXd>& d_out,
                         Eigen::MatrixXd& d_in) const {
  const std::size_t hidden = w_.size() - 1;
  if (hidden == 0) {
    d_in.noalias() = w_[0].transpose() * d_out;
    return;
  }
  cache.delta.noalias() = w_[hidden].transpose() * d_out;
  for (std::size_t l = hidden; l-- > 0;) {
    activation_backward(arch_.activation, cache.pre[l], cache.post[l], cache.delta);
    if (l == 0) {
      d_in.noalias() = w_[0].transpose() * cache.delta;
    } else {
      cache.delta_prev.noalias() = w_[l].transpose() * cache.delta;
      cache.delta.swap(cache.delta_prev);
    }
  }
}

void Mlp::backward_params(const Eigen::Ref<const Eigen::MatrixXd>& in, ForwardCache& cache,
                          const Eigen::Ref<const Eigen::MatrixXd>& d_out, MlpGradient& grad) const {
  const std::size_t layers = w_.size();
  grad.weights.resize(layers);
  grad.biases.resize(layers);
  cache.delta = d_out;
  for (std::size_t l = layers; l-- > 0;) {
    const Eigen::MatrixXd& d = cache.delta;
    if (l == 0) {
      grad.weights[0].noalias() = d * in.transpose();
    } else {
      grad.weights[l].noalias() = d * cache.post[l - 1].transpose();
    }
    grad.biases[l] = d.rowwise().sum();
    if (l == 0) break;
    cache.delta_prev.noalias() = w_[l].transpose() * d;
    activation_backward(arch_.activation, cache.pre[l - 1], cache.post[l - 1], cache.delta_prev);
    cache.delta.swap(cache.delta_prev);
  }
}

std::vector<double> Mlp::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (std::size_t l = 0; l < w_.size(); ++l) {
    out.insert(out.end(), w_[l].data(), w_[l].data() + w_[l].size());
    out.insert(out.end(), b_[l].data(), b_[l].data() + b_[l].size());
  }
  return out;
}

void Mlp::unflatten(const std::vector<double>& params) {
  if (params.size() != parameter_count()) throw ContractViolation("Mlp::unflatten: parameter count mismatch");
  std::size_t k = 0;
  for (std::size_t l = 0; l < w_.size(); ++l) {
    std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(k), w_[l].size(), w_[l].data());
    k += static_cast<std::size_t>(w_[l].size());
    std::copy_n(params.begin() + static_cast<std::ptrdiff_t>(k), b_[l].size(), b_[l].data());
    k += static_cast<std::size_t>(b_[l].size());
  }
}

Adam::Adam(const Mlp& net, Options opt) : opt_(opt) {
  for (const auto& w : net.weights()) {
    mw_.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
    vw_.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
  }
  for (const auto& b : net.biases()) {
    mb_.push_back(Eigen::VectorXd::Zero(b.size()));
    vb_.push_back(Eigen::VectorXd::Zero(b.size()));
  }
}

void Adam::step(Mlp& net, const MlpGradient& grad) {
  ++t_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  const double lr = opt_.learning_rate * std::sqrt(c2) / c1;
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = opt_.beta1 * m + (1.0 - opt_.beta1) * g;
    v.array() = opt_.beta2 * v.array() + (1.0 - opt_.beta2) * g.array().square();
    param.array() -= lr * m.array() / (v.array().sqrt() + opt_.epsilon * std::sqrt(c2));
  };
  for (std::size_t l = 0; l < mw_.size(); ++l) {
    update(net.weights()[l], mw_[l], vw_[l], grad.weights[l]);
    update(net.biases()[l], mb_[l], vb_[l], grad.biases[l]);
  }
}

}  // namespace cfvi
