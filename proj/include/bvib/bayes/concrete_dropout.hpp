#pragma once

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "bvib/error.hpp"
#include "bvib/nn/tensor.hpp"
#include "bvib/random.hpp"

namespace bvib::bayes {

inline double logit(double p) { return std::log(p) - std::log1p(-p); }
inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// Relaxed Bernoulli drop gate: sigmoid((logit p + logit u) / t). Values near 1
// drop the unit.
inline double concrete_gate(double p, double u, double t) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("concrete_gate: p must lie in (0, 1)");
  if (!(u > 0.0 && u < 1.0)) throw DomainError("concrete_gate: u must lie in (0, 1)");
  if (!(t > 0.0)) throw DomainError("concrete_gate: temperature must be positive");
  return sigmoid((logit(p) + logit(u)) / t);
}

// Same gate parameterized by logit p, as used inside the network.
template <typename S>
S drop_gate_from_logit(S logit_p, double u, double t) {
  return static_cast<S>(sigmoid((static_cast<double>(logit_p) + logit(u)) / t));
}

// Binary entropy in nats.
inline double binary_entropy(double p) {
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return -p * std::log(p) - (1.0 - p) * std::log1p(-p);
}

struct ConcreteDropoutState {
  std::vector<double> logit_p;  // one per dropout site
  double temperature = 0.1;
  double length_scale = 1e-3;
  int dataset_size = 1;

  double p(std::size_t layer) const { return sigmoid(logit_p.at(layer)); }

  void validate() const {
    if (!(temperature > 0.0 && temperature <= 1.0)) throw DomainError("concrete dropout: temperature must lie in (0, 1]");
    if (!(length_scale > 0.0)) throw DomainError("concrete dropout: length scale must be positive");
    if (dataset_size < 1) throw DomainError("concrete dropout: dataset size must be >= 1");
  }
};

// One layer's contribution to the weight-space KL and its derivatives:
//   R = l^2 (1 - p) / (2N) ||W||^2 - (K / N) H(p),  K = gated input units.
struct CdLayerRegularizer {
  double value = 0.0;
  double d_logit_p = 0.0;
  double d_weight_scale = 0.0;  // dR/dW = d_weight_scale * W
};

inline CdLayerRegularizer cd_layer_regularizer(double logit_p, double weight_sqnorm, int input_units,
                                               double length_scale, int dataset_size) {
  const double p = sigmoid(logit_p);
  const double n = static_cast<double>(dataset_size);
  const double l2 = length_scale * length_scale;
  CdLayerRegularizer r;
  r.value = l2 * (1.0 - p) / (2.0 * n) * weight_sqnorm - input_units / n * binary_entropy(p);
  // dH/dp = -logit(p); dp/dlogit = p (1 - p).
  const double d_p = -l2 / (2.0 * n) * weight_sqnorm + input_units / n * logit_p;
  r.d_logit_p = d_p * p * (1.0 - p);
  r.d_weight_scale = l2 * (1.0 - p) / n;
  return r;
}

struct GatedWeights {
  const Eigen::MatrixXd* weights;
  int input_units;
};

inline double cd_regularizer(const ConcreteDropoutState& state, std::span<const GatedWeights> layers) {
  state.validate();
  if (layers.size() != state.logit_p.size()) throw ShapeError("cd_regularizer: one weight matrix per dropout site");
  double total = 0.0;
  for (std::size_t i = 0; i < layers.size(); ++i)
    total += cd_layer_regularizer(state.logit_p[i], layers[i].weights->squaredNorm(), layers[i].input_units,
                                  state.length_scale, state.dataset_size)
                 .value;
  return total;
}

// Dense layers: the gated units are the weight matrix columns.
inline double cd_regularizer(const ConcreteDropoutState& state, const std::vector<Eigen::MatrixXd>& weights) {
  std::vector<GatedWeights> layers;
  for (const auto& w : weights) layers.push_back({&w, static_cast<int>(w.cols())});
  return cd_regularizer(state, layers);
}

// Dense layer with concrete dropout on its input: W (x ⊙ (1 - z) / (1 - p)) + b,
// with one gate per input unit and batch column. x is [in, B].
inline Eigen::MatrixXd cd_layer_forward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& w, const Eigen::VectorXd& b,
                                        double logit_p, double temperature, Rng& rng) {
  if (w.cols() != x.rows() || b.size() != w.rows()) throw ShapeError("cd_layer_forward: dimension mismatch");
  const double keep = 1.0 - sigmoid(logit_p);
  Eigen::MatrixXd gated = x;
  for (Eigen::Index c = 0; c < x.cols(); ++c)
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      gated(i, c) *= (1.0 - drop_gate_from_logit(logit_p, uniform_open01(rng), temperature)) / keep;
  return (w * gated).colwise() + b;
}

}  // namespace bvib::bayes
