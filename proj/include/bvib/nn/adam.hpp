#pragma once

#include <cmath>
#include <vector>

#include "bvib/error.hpp"
#include "bvib/nn/tensor.hpp"

namespace bvib::nn {

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

template <typename S>
struct AdamState {
  long long steps = 0;
  std::vector<Mat<S>> m, v;
};

// Adam with L2 weight decay added to the gradient. Moment buffers are keyed by
// the visiting order of the parameters, which must stay fixed.
template <typename S>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {
    if (!(cfg_.lr > 0.0)) throw ConfigError("adam: lr must be positive");
  }

  // Visits params via net.for_each_param; frozen(name) excludes a parameter from the update.
  template <typename Net, typename Frozen>
  void step(Net& net, Frozen&& frozen) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::size_t i = 0;
    net.for_each_param([&](Param<S>& p) {
      if (i == m_.size()) {
        m_.push_back(Mat<S>::Zero(p.value.rows(), p.value.cols()));
        v_.push_back(Mat<S>::Zero(p.value.rows(), p.value.cols()));
      }
      auto& m = m_[i];
      auto& v = v_[i];
      ++i;
      if (frozen(p.name)) return;
      Mat<S> g = p.grad;
      if (cfg_.weight_decay != 0.0) g += static_cast<S>(cfg_.weight_decay) * p.value;
      m = static_cast<S>(cfg_.beta1) * m + static_cast<S>(1.0 - cfg_.beta1) * g;
      v = static_cast<S>(cfg_.beta2) * v + static_cast<S>(1.0 - cfg_.beta2) * g.cwiseProduct(g);
      const S step = static_cast<S>(cfg_.lr / c1);
      const S sc2 = static_cast<S>(1.0 / c2);
      p.value.array() -= step * m.array() / ((v.array() * sc2).sqrt() + static_cast<S>(cfg_.eps));
    });
  }

  template <typename Net>
  void step(Net& net) {
    step(net, [](const std::string&) { return false; });
  }

  long long steps() const { return t_; }
  AdamState<S> state() const { return {t_, m_, v_}; }
  void set_state(AdamState<S> st) {
    if (st.m.size() != st.v.size()) throw ShapeError("adam: moment buffer count mismatch");
    t_ = st.steps;
    m_ = std::move(st.m);
    v_ = std::move(st.v);
  }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  AdamConfig cfg_;
  long long t_ = 0;
  std::vector<Mat<S>> m_, v_;
};

// Scales all gradients so their global L2 norm is at most max_norm; returns the pre-clip norm.
template <typename S, typename Net>
double clip_grad_norm(Net& net, double max_norm) {
  double sq = 0.0;
  net.for_each_param([&](Param<S>& p) { sq += p.grad.template cast<double>().squaredNorm(); });
  const double norm = std::sqrt(sq);
  if (std::isfinite(norm) && norm > max_norm && max_norm > 0.0) {
    const S s = static_cast<S>(max_norm / norm);
    net.for_each_param([&](Param<S>& p) { p.grad *= s; });
  }
  return norm;
}

}  // namespace bvib::nn
