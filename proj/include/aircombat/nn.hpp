#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "aircombat/common.hpp"

namespace aircombat::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class OutputActivation { Linear, Tanh };

inline std::string to_string(OutputActivation a) {
  return a == OutputActivation::Tanh ? "tanh" : "linear";
}

inline OutputActivation parse_output_activation(const std::string& s) {
  if (s == "tanh") return OutputActivation::Tanh;
  if (s == "linear") return OutputActivation::Linear;
  throw InputError("unknown output activation '" + s + "'");
}

/// Dense network with ReLU hidden layers. Batches are row-major in the sense
/// that each row of an input matrix is one sample.
struct Mlp {
  std::vector<int> layer_sizes;
  std::vector<Matrix> weights;  // weights[k] is layer_sizes[k+1] x layer_sizes[k]
  std::vector<Vector> biases;   // biases[k] has layer_sizes[k+1] entries
  OutputActivation output = OutputActivation::Linear;

  int input_size() const { return layer_sizes.front(); }
  int output_size() const { return layer_sizes.back(); }
  std::size_t num_layers() const { return weights.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) n += weights[k].size() + biases[k].size();
    return n;
  }

  bool same_shape(const Mlp& other) const {
    return layer_sizes == other.layer_sizes && output == other.output;
  }
};

/// Per-parameter arrays congruent with an Mlp.
struct GradientSet {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  static GradientSet zeros_like(const Mlp& net) {
    GradientSet g;
    for (std::size_t k = 0; k < net.num_layers(); ++k) {
      g.weights.push_back(Matrix::Zero(net.weights[k].rows(), net.weights[k].cols()));
      g.biases.push_back(Vector::Zero(net.biases[k].size()));
    }
    return g;
  }

  bool all_finite() const {
    for (const auto& w : weights)
      if (!w.allFinite()) return false;
    for (const auto& b : biases)
      if (!b.allFinite()) return false;
    return true;
  }

  double max_abs() const {
    double m = 0.0;
    for (const auto& w : weights)
      if (w.size()) m = std::max(m, w.cwiseAbs().maxCoeff());
    for (const auto& b : biases)
      if (b.size()) m = std::max(m, b.cwiseAbs().maxCoeff());
    return m;
  }
};

struct AdamState {
  GradientSet first_moment;
  GradientSet second_moment;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_network(const Mlp& net) {
    AdamState s;
    s.first_moment = GradientSet::zeros_like(net);
    s.second_moment = GradientSet::zeros_like(net);
    return s;
  }
};

inline void check_layer_sizes(const std::vector<int>& sizes) {
  if (sizes.size() < 2) throw InputError("an mlp needs at least input and output sizes");
  for (int s : sizes)
    if (s <= 0) throw InputError("layer sizes must be positive");
}

/// Uniform +-sqrt(6/fan_in) weights, zero biases.
inline Mlp init_mlp(const std::vector<int>& layer_sizes, OutputActivation output,
                    std::uint64_t seed) {
  check_layer_sizes(layer_sizes);
  Rng rng(seed);
  Mlp net;
  net.layer_sizes = layer_sizes;
  net.output = output;
  for (std::size_t k = 0; k + 1 < layer_sizes.size(); ++k) {
    const int fan_in = layer_sizes[k];
    const int fan_out = layer_sizes[k + 1];
    const double bound = std::sqrt(6.0 / fan_in);
    Matrix w(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r)
      for (int c = 0; c < fan_in; ++c) w(r, c) = rng.uniform(-bound, bound);
    net.weights.push_back(std::move(w));
    net.biases.push_back(Vector::Zero(fan_out));
  }
  return net;
}

/// Activations kept from a forward pass. activations[0] is the input,
/// activations[k+1] the post-activation output of layer k.
struct ForwardCache {
  std::vector<Matrix> activations;
  std::vector<Matrix> pre_activations;

  const Matrix& output() const { return activations.back(); }
  Eigen::Index batch_size() const { return activations.front().rows(); }
};

inline ForwardCache forward(const Mlp& net, const Matrix& input) {
  if (input.cols() != net.input_size())
    throw InputError("input width " + std::to_string(input.cols()) + " does not match network input " +
                     std::to_string(net.input_size()));
  ForwardCache cache;
  cache.activations.reserve(net.num_layers() + 1);
  cache.pre_activations.reserve(net.num_layers());
  cache.activations.push_back(input);
  for (std::size_t k = 0; k < net.num_layers(); ++k) {
    Matrix z = cache.activations.back() * net.weights[k].transpose();
    z.rowwise() += net.biases[k].transpose();
    const bool last = k + 1 == net.num_layers();
    Matrix a;
    if (!last) {
      a = z.cwiseMax(0.0);
    } else if (net.output == OutputActivation::Tanh) {
      a = z.array().tanh().matrix();
    } else {
      a = z;
    }
    cache.pre_activations.push_back(std::move(z));
    cache.activations.push_back(std::move(a));
  }
  return cache;
}

inline Matrix predict(const Mlp& net, const Matrix& input) { return forward(net, input).output(); }

struct BackwardResult {
  GradientSet params;
  Matrix input;
};

/// Reverse-mode gradients of mean_i <output_grad_i, output_i> with respect to
/// the parameters and to each input row.
inline BackwardResult backward(const Mlp& net, const ForwardCache& cache, const Matrix& output_grad) {
  const Eigen::Index batch = cache.batch_size();
  if (cache.activations.size() != net.num_layers() + 1)
    throw InputError("forward cache does not belong to this network");
  if (output_grad.rows() != batch || output_grad.cols() != net.output_size())
    throw InputError("output gradient shape does not match the forward batch");

  BackwardResult result;
  result.params.weights.resize(net.num_layers());
  result.params.biases.resize(net.num_layers());

  Matrix delta = output_grad / static_cast<double>(batch);
  for (std::size_t k = net.num_layers(); k-- > 0;) {
    const bool last = k + 1 == net.num_layers();
    if (last) {
      if (net.output == OutputActivation::Tanh) {
        const Matrix& y = cache.activations[k + 1];
        delta = delta.cwiseProduct((1.0 - y.array().square()).matrix());
      }
    } else {
      delta = delta.cwiseProduct((cache.pre_activations[k].array() > 0.0).cast<double>().matrix());
    }
    result.params.weights[k] = delta.transpose() * cache.activations[k];
    result.params.biases[k] = delta.colwise().sum().transpose();
    delta = delta * net.weights[k];
  }
  result.input = std::move(delta);
  return result;
}

/// One Adam step with bias correction. Non-finite gradients are rejected
/// before anything is modified.
inline void adam_step(Mlp& net, const GradientSet& grads, AdamState& state, double lr) {
  if (grads.weights.size() != net.num_layers() || state.first_moment.weights.size() != net.num_layers())
    throw InputError("gradient set is not congruent with the network");
  for (std::size_t k = 0; k < net.num_layers(); ++k) {
    if (grads.weights[k].rows() != net.weights[k].rows() || grads.weights[k].cols() != net.weights[k].cols() ||
        grads.biases[k].size() != net.biases[k].size())
      throw InputError("gradient set is not congruent with the network");
  }
  if (!grads.all_finite()) throw DivergenceError("non-finite gradient passed to adam_step");

  state.step += 1;
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const double eps = state.epsilon;

  auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t k = 0; k < net.num_layers(); ++k) {
    update(net.weights[k], grads.weights[k], state.first_moment.weights[k], state.second_moment.weights[k]);
    update(net.biases[k], grads.biases[k], state.first_moment.biases[k], state.second_moment.biases[k]);
  }
}

/// Central-difference gradient of loss(forward(net, input)) with respect to
/// every parameter. Test oracle: costs two forwards per parameter.
inline GradientSet finite_difference_grad(const Mlp& net, const Matrix& input,
                                          const std::function<double(const Matrix&)>& loss,
                                          double h = 1e-6) {
  Mlp probe = net;
  GradientSet g = GradientSet::zeros_like(net);
  auto central = [&](double& param) {
    const double saved = param;
    param = saved + h;
    const double up = loss(predict(probe, input));
    param = saved - h;
    const double down = loss(predict(probe, input));
    param = saved;
    return (up - down) / (2.0 * h);
  };
  for (std::size_t k = 0; k < net.num_layers(); ++k) {
    for (Eigen::Index i = 0; i < probe.weights[k].size(); ++i) g.weights[k].data()[i] = central(probe.weights[k].data()[i]);
    for (Eigen::Index i = 0; i < probe.biases[k].size(); ++i) g.biases[k].data()[i] = central(probe.biases[k].data()[i]);
  }
  return g;
}

/// Relative error with a small absolute floor so that near-zero entries are
/// compared on an absolute scale.
inline double relative_error(double a, double b, double floor = 1e-4) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_relative_error(const GradientSet& a, const GradientSet& b, double floor = 1e-4) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.weights.size(); ++k) {
    for (Eigen::Index i = 0; i < a.weights[k].size(); ++i)
      worst = std::max(worst, relative_error(a.weights[k].data()[i], b.weights[k].data()[i], floor));
    for (Eigen::Index i = 0; i < a.biases[k].size(); ++i)
      worst = std::max(worst, relative_error(a.biases[k].data()[i], b.biases[k].data()[i], floor));
  }
  return worst;
}

inline Matrix row(const std::vector<double>& values) {
  Matrix m(1, static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = values[i];
  return m;
}

}  // namespace aircombat::nn
