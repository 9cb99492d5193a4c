#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include <Eigen/Core>

#include "bvib/config_io.hpp"
#include "bvib/error.hpp"
#include "bvib/model/network.hpp"
#include "bvib/nn/tensor.hpp"

namespace bvib::objectives {

using model::LatentDist;
using model::PredictiveSample;

struct LossConfig {
  double beta = 0.01;
  int burnin_start = 0;
  int burnin_end = 30;
  int dropout_burnin_end = 10;

  void validate() const {
    if (!(beta >= 0.0)) throw ConfigError("loss: beta must be >= 0");
    if (burnin_start < 0 || burnin_end < 0 || dropout_burnin_end < 0) throw ConfigError("loss: epochs must be >= 0");
    if (burnin_start > burnin_end) throw ConfigError("loss: burnin_start must be <= burnin_end");
  }

  Json to_json() const {
    return Json{{"beta", beta},
                {"burnin_start", burnin_start},
                {"burnin_end", burnin_end},
                {"dropout_burnin_end", dropout_burnin_end}};
  }
  static LossConfig from_json(const Json& j) {
    ConfigReader r(j, "loss");
    r.allow_only({"beta", "burnin_start", "burnin_end", "dropout_burnin_end"});
    LossConfig c;
    r.get("beta", c.beta);
    r.get("burnin_start", c.burnin_start);
    r.get("burnin_end", c.burnin_end);
    r.get("dropout_burnin_end", c.dropout_burnin_end);
    c.validate();
    return c;
  }
};

// total = (1 - burnin_alpha) * l2 + burnin_alpha * (nll + beta * latent_kl) + weight_kl
struct LossBreakdown {
  double total = 0.0;
  double nll = 0.0;
  double latent_kl = 0.0;
  double weight_kl = 0.0;
  double l2 = 0.0;
  double burnin_alpha = 1.0;
};

inline double blend(const LossBreakdown& b, double beta) {
  return (1.0 - b.burnin_alpha) * b.l2 + b.burnin_alpha * (b.nll + beta * b.latent_kl) + b.weight_kl;
}

// Mean over coordinates of (log var + (y - y_hat)^2 / var) / 2, without the log(2 pi) / 2 constant.
inline double gaussian_nll(const Eigen::VectorXd& y, const Eigen::VectorXd& y_hat, const Eigen::VectorXd& log_var) {
  if (y.size() != y_hat.size() || y.size() != log_var.size()) throw ShapeError("gaussian_nll: length mismatch");
  if (y.size() == 0) throw ShapeError("gaussian_nll: empty input");
  return 0.5 * (log_var.array() + (y - y_hat).array().square() * (-log_var.array()).exp()).mean();
}

inline double kl_gauss_std_normal(const Eigen::VectorXd& mu, const Eigen::VectorXd& log_var) {
  if (mu.size() != log_var.size()) throw ShapeError("kl_gauss_std_normal: length mismatch");
  return 0.5 * (mu.array().square() + log_var.array().exp() - log_var.array() - 1.0).sum();
}

inline double l2_loss(const Eigen::VectorXd& y, const Eigen::VectorXd& y_hat) {
  if (y.size() != y_hat.size()) throw ShapeError("l2_loss: length mismatch");
  if (y.size() == 0) throw ShapeError("l2_loss: empty input");
  return (y - y_hat).squaredNorm() / static_cast<double>(y.size());
}

inline double burnin_alpha(int epoch, const LossConfig& cfg) {
  if (epoch < 0) throw DomainError("burnin_alpha: negative epoch");
  if (epoch >= cfg.burnin_end) return 1.0;
  if (epoch <= cfg.burnin_start) return 0.0;
  return static_cast<double>(epoch - cfg.burnin_start) / static_cast<double>(cfg.burnin_end - cfg.burnin_start);
}

inline LossBreakdown vib_loss(const Eigen::VectorXd& y, std::span<const PredictiveSample> samples,
                              const LatentDist& latent, double beta, double alpha) {
  if (samples.empty()) throw DomainError("vib_loss: no predictive samples");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("vib_loss: alpha must lie in [0, 1]");
  LossBreakdown b;
  for (const auto& s : samples) {
    b.nll += gaussian_nll(y, s.y_hat, s.log_var_y);
    b.l2 += l2_loss(y, s.y_hat);
  }
  b.nll /= static_cast<double>(samples.size());
  b.l2 /= static_cast<double>(samples.size());
  b.latent_kl = kl_gauss_std_normal(latent.mu, latent.log_var);
  b.burnin_alpha = alpha;
  b.total = blend(b, beta);
  return b;
}

inline LossBreakdown bvib_loss(const Eigen::VectorXd& y, std::span<const PredictiveSample> samples,
                               const LatentDist& latent, double beta, double alpha, double weight_kl) {
  LossBreakdown b = vib_loss(y, samples, latent, beta, alpha);
  b.weight_kl = weight_kl;
  b.total = blend(b, beta);
  return b;
}

// Batch-mean loss over columns with gradients w.r.t. the network outputs.
// All matrices hold one sample per column; weight_kl is left at 0.
template <typename S>
struct BatchLoss {
  LossBreakdown loss;
  nn::Mat<S> d_y_hat, d_log_var_y, d_mu, d_log_var_z;
};

template <typename S>
BatchLoss<S> batch_loss(const nn::Mat<S>& y, const nn::Mat<S>& y_hat, const nn::Mat<S>& log_var_y,
                        const nn::Mat<S>& mu, const nn::Mat<S>& log_var_z, double beta, double alpha) {
  if (y.rows() != y_hat.rows() || y.cols() != y_hat.cols() || log_var_y.rows() != y.rows() ||
      log_var_y.cols() != y.cols() || mu.cols() != y.cols() || log_var_z.rows() != mu.rows() ||
      log_var_z.cols() != mu.cols())
    throw ShapeError("batch_loss: shape mismatch");
  using A = Eigen::ArrayXXd;
  const double n = static_cast<double>(y.cols());
  const double d = static_cast<double>(y.rows());
  const A r = (y_hat - y).template cast<double>().array();
  const A lv = log_var_y.template cast<double>().array();
  const A inv_var = (-lv).exp();
  const A m = mu.template cast<double>().array();
  const A lz = log_var_z.template cast<double>().array();
  const A ez = lz.exp();

  BatchLoss<S> out;
  auto& b = out.loss;
  b.l2 = r.square().sum() / (n * d);
  b.nll = 0.5 * (lv + r.square() * inv_var).sum() / (n * d);
  b.latent_kl = 0.5 * (m.square() + ez - lz - 1.0).sum() / n;
  b.burnin_alpha = alpha;
  b.total = blend(b, beta);

  out.d_y_hat = (((1.0 - alpha) * 2.0 * r + alpha * r * inv_var) / (n * d)).matrix().template cast<S>();
  out.d_log_var_y = (alpha * 0.5 * (1.0 - r.square() * inv_var) / (n * d)).matrix().template cast<S>();
  out.d_mu = (alpha * beta * m / n).matrix().template cast<S>();
  out.d_log_var_z = (alpha * beta * 0.5 * (ez - 1.0) / n).matrix().template cast<S>();
  return out;
}

}  // namespace bvib::objectives
