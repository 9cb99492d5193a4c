#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bvib/bayes/batch_ensemble.hpp"
#include "bvib/bayes/concrete_dropout.hpp"
#include "bvib/error.hpp"
#include "bvib/nn/tensor.hpp"
#include "bvib/random.hpp"

namespace bvib::nn {

enum class Mode { Train, Eval };
enum class DropoutMode { Off, Sample, Fixed };
enum class Activation { None, ReLU, PReLU };

// Per-call options shared by every block of a forward pass.
template <typename S>
struct PassSpec {
  Mode mode = Mode::Eval;
  DropoutMode dropout = DropoutMode::Off;
  std::span<const int> members;  // one per batch column; BE variants only
  Rng* rng = nullptr;            // required for DropoutMode::Sample
  // DropoutMode::Fixed: drop gates [units, B] for each dropout site, in block order.
  const std::vector<Mat<S>>* fixed_gates = nullptr;
};

// 3x3x3 convolution, stride 2, zero padding 1.
struct ConvGeometry {
  std::array<int, 3> in{1, 1, 1};
  std::array<int, 3> out{1, 1, 1};

  static ConvGeometry downsample(std::array<int, 3> in) {
    ConvGeometry g;
    g.in = in;
    for (int a = 0; a < 3; ++a) g.out[a] = (in[a] - 1) / 2 + 1;
    return g;
  }
  Eigen::Index in_voxels() const { return Eigen::Index(in[0]) * in[1] * in[2]; }
  Eigen::Index out_voxels() const { return Eigen::Index(out[0]) * out[1] * out[2]; }
};

// x: [C, B * Vin] -> col: [C * 27, B * Vout].
template <typename S>
Mat<S> im2col(const Mat<S>& x, const ConvGeometry& g, Eigen::Index batch) {
  const Eigen::Index channels = x.rows();
  const Eigen::Index vin = g.in_voxels(), vout = g.out_voxels();
  Mat<S> col(channels * 27, batch * vout);
  const S* src = x.data();
  S* dst = col.data();
  for (Eigen::Index b = 0; b < batch; ++b)
    for (int od = 0; od < g.out[0]; ++od)
      for (int oh = 0; oh < g.out[1]; ++oh)
        for (int ow = 0; ow < g.out[2]; ++ow) {
          S* column = dst + (b * vout + (Eigen::Index(od) * g.out[1] + oh) * g.out[2] + ow) * channels * 27;
          for (int kd = 0; kd < 3; ++kd) {
            const int id = 2 * od - 1 + kd;
            for (int kh = 0; kh < 3; ++kh) {
              const int ih = 2 * oh - 1 + kh;
              for (int kw = 0; kw < 3; ++kw) {
                const int iw = 2 * ow - 1 + kw;
                const int k = kd * 9 + kh * 3 + kw;
                const bool inside = id >= 0 && id < g.in[0] && ih >= 0 && ih < g.in[1] && iw >= 0 && iw < g.in[2];
                if (!inside) {
                  for (Eigen::Index c = 0; c < channels; ++c) column[c * 27 + k] = S(0);
                  continue;
                }
                const S* vox = src + (b * vin + (Eigen::Index(id) * g.in[1] + ih) * g.in[2] + iw) * channels;
                for (Eigen::Index c = 0; c < channels; ++c) column[c * 27 + k] = vox[c];
              }
            }
          }
        }
  return col;
}

// Adjoint of im2col.
template <typename S>
Mat<S> col2im(const Mat<S>& col, const ConvGeometry& g, Eigen::Index channels, Eigen::Index batch) {
  const Eigen::Index vin = g.in_voxels(), vout = g.out_voxels();
  Mat<S> x = Mat<S>::Zero(channels, batch * vin);
  S* dst = x.data();
  const S* src = col.data();
  for (Eigen::Index b = 0; b < batch; ++b)
    for (int od = 0; od < g.out[0]; ++od)
      for (int oh = 0; oh < g.out[1]; ++oh)
        for (int ow = 0; ow < g.out[2]; ++ow) {
          const S* column = src + (b * vout + (Eigen::Index(od) * g.out[1] + oh) * g.out[2] + ow) * channels * 27;
          for (int kd = 0; kd < 3; ++kd) {
            const int id = 2 * od - 1 + kd;
            if (id < 0 || id >= g.in[0]) continue;
            for (int kh = 0; kh < 3; ++kh) {
              const int ih = 2 * oh - 1 + kh;
              if (ih < 0 || ih >= g.in[1]) continue;
              for (int kw = 0; kw < 3; ++kw) {
                const int iw = 2 * ow - 1 + kw;
                if (iw < 0 || iw >= g.in[2]) continue;
                const int k = kd * 9 + kh * 3 + kw;
                S* vox = dst + (b * vin + (Eigen::Index(id) * g.in[1] + ih) * g.in[2] + iw) * channels;
                for (Eigen::Index c = 0; c < channels; ++c) vox[c] += column[c * 27 + k];
              }
            }
          }
        }
  return x;
}

template <typename S>
struct BlockCache {
  Mat<S> input;      // block input, before dropout
  Mat<S> drop;       // drop gates z [units, B]
  Mat<S> keep;       // (1 - z) / (1 - p) [units, B]
  Mat<S> scaled_in;  // dropout output ⊙ s
  Mat<S> affine_in;  // im2col(scaled_in) for conv, scaled_in for dense
  Mat<S> pre_fast;   // W affine_in, before the r scaling (BE)
  Mat<S> xhat;       // batch norm normalized input
  Vec<S> inv_std;
  Vec<S> batch_mean, batch_var;
  Mat<S> pre_act;
  Eigen::Index batch = 0;
};

struct BlockSpec {
  std::string name;
  bool conv = false;
  ConvGeometry geometry;  // conv only
  int in_units = 0;       // channels (conv) or features (dense)
  int out_units = 0;
  bool dropout = false;   // concrete dropout on the block input
  bool batch_norm = false;
  Activation activation = Activation::None;
  int members = 0;        // > 0 enables batch-ensemble fast weights
};

// One layer: [concrete dropout] -> affine (conv or dense, optional rank-1 fast
// weights) -> [batch norm] -> activation. Activations are [units, B * V] with
// the V voxels of each sample stored contiguously (V = 1 for dense blocks).
template <typename S>
class Block {
 public:
  Block() = default;

  Block(BlockSpec spec, double init_drop_prob, Rng& rng) : spec_(std::move(spec)) {
    const int fan = spec_.conv ? 27 : 1;
    weight_ = Param<S>(spec_.name + ".weight",
                       bayes::xavier_uniform<S>(spec_.out_units, spec_.in_units * fan, double(spec_.in_units) * fan,
                                                double(spec_.out_units) * fan, rng));
    bias_ = Param<S>(spec_.name + ".bias", Mat<S>::Zero(spec_.out_units, 1));
    if (spec_.members > 0) {
      fast_r_ = Param<S>(spec_.name + ".fast_r", bayes::random_signs<S>(spec_.out_units, spec_.members, rng));
      fast_s_ = Param<S>(spec_.name + ".fast_s", bayes::random_signs<S>(spec_.in_units, spec_.members, rng));
    }
    if (spec_.batch_norm) {
      gamma_ = Param<S>(spec_.name + ".bn_gamma", Mat<S>::Ones(spec_.out_units, 1));
      beta_ = Param<S>(spec_.name + ".bn_beta", Mat<S>::Zero(spec_.out_units, 1));
      running_mean_ = Vec<S>::Zero(spec_.out_units);
      running_var_ = Vec<S>::Ones(spec_.out_units);
    }
    if (spec_.activation == Activation::PReLU) prelu_ = Param<S>(spec_.name + ".prelu", Mat<S>::Constant(1, 1, S(0.25)));
    if (spec_.dropout)
      logit_p_ = Param<S>(spec_.name + ".logit_p", Mat<S>::Constant(1, 1, static_cast<S>(bayes::logit(init_drop_prob))));
  }

  const BlockSpec& spec() const { return spec_; }
  Eigen::Index in_per_sample() const { return spec_.conv ? spec_.geometry.in_voxels() : 1; }
  Eigen::Index out_per_sample() const { return spec_.conv ? spec_.geometry.out_voxels() : 1; }
  bool has_dropout() const { return spec_.dropout; }
  bool ensemble() const { return spec_.members > 0; }
  double drop_probability() const { return bayes::sigmoid(static_cast<double>(logit_p_.value(0, 0))); }

  template <typename F>
  void for_each_param(F&& f) {
    for (Param<S>* p : {&weight_, &bias_, &fast_r_, &fast_s_, &gamma_, &beta_, &prelu_, &logit_p_})
      if (p->size() > 0) f(*p);
  }
  template <typename F>
  void for_each_param(F&& f) const {
    for (const Param<S>* p : {&weight_, &bias_, &fast_r_, &fast_s_, &gamma_, &beta_, &prelu_, &logit_p_})
      if (p->size() > 0) f(*p);
  }

  Vec<S>& running_mean() { return running_mean_; }
  Vec<S>& running_var() { return running_var_; }
  const Vec<S>& running_mean() const { return running_mean_; }
  const Vec<S>& running_var() const { return running_var_; }
  const Param<S>& weight() const { return weight_; }
  Param<S>& weight() { return weight_; }
  Param<S>& logit_p() { return logit_p_; }
  const Param<S>& logit_p() const { return logit_p_; }

  // Draws drop gates [in_units, batch] for this block.
  Mat<S> sample_gates(Eigen::Index batch, double temperature, Rng& rng) const {
    Mat<S> z(spec_.in_units, batch);
    const S lp = logit_p_.value(0, 0);
    for (Eigen::Index b = 0; b < batch; ++b)
      for (Eigen::Index u = 0; u < spec_.in_units; ++u) z(u, b) = bayes::drop_gate_from_logit(lp, uniform_open01(rng), temperature);
    return z;
  }

  Mat<S> forward(const Mat<S>& x, const PassSpec<S>& pass, double temperature, const Mat<S>* fixed_gate,
                 BlockCache<S>* cache) const {
    const Eigen::Index vin = in_per_sample();
    if (x.rows() != spec_.in_units || x.cols() % vin != 0)
      throw ShapeError(spec_.name + ": input has shape " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()));
    const Eigen::Index batch = x.cols() / vin;
    if (ensemble() && static_cast<Eigen::Index>(pass.members.size()) != batch)
      throw ShapeError(spec_.name + ": one ensemble member index per sample is required");

    Mat<S> h = x;
    Mat<S> drop, keep;
    if (spec_.dropout && pass.dropout != DropoutMode::Off) {
      if (pass.dropout == DropoutMode::Sample) {
        if (pass.rng == nullptr) throw DomainError(spec_.name + ": dropout sampling needs an rng");
        drop = sample_gates(batch, temperature, *pass.rng);
      } else {
        if (fixed_gate == nullptr || fixed_gate->rows() != spec_.in_units || fixed_gate->cols() != batch)
          throw ShapeError(spec_.name + ": fixed drop gates have the wrong shape");
        drop = *fixed_gate;
      }
      const S inv_keep = S(1) / (S(1) - static_cast<S>(drop_probability()));
      keep = ((Mat<S>::Ones(drop.rows(), drop.cols()) - drop) * inv_keep).eval();
      for (Eigen::Index b = 0; b < batch; ++b) h.middleCols(b * vin, vin).array().colwise() *= keep.col(b).array();
    }
    if (ensemble()) scale_by_member(h, fast_s_.value, pass.members, vin);

    Mat<S> affine_in = spec_.conv ? im2col(h, spec_.geometry, batch) : h;
    Mat<S> pre_fast = weight_.value * affine_in;
    Mat<S> y = pre_fast;
    if (ensemble()) scale_by_member(y, fast_r_.value, pass.members, out_per_sample());
    y.colwise() += bias_.value.col(0);

    Vec<S> mean, var, inv_std;
    Mat<S> xhat;
    if (spec_.batch_norm) {
      constexpr S eps = S(1e-5);
      if (pass.mode == Mode::Train) {
        const S n = static_cast<S>(y.cols());
        mean = y.rowwise().sum() / n;
        y.colwise() -= mean;
        var = y.array().square().rowwise().sum() / n;
        inv_std = (var.array() + eps).rsqrt();
        xhat = inv_std.asDiagonal() * y;
      } else {
        inv_std = (running_var_.array() + eps).rsqrt();
        xhat = inv_std.asDiagonal() * (y.colwise() - running_mean_);
      }
      y = (gamma_.value.col(0).asDiagonal() * xhat).colwise() + beta_.value.col(0);
    }

    Mat<S> pre_act;
    if (cache) pre_act = y;
    switch (spec_.activation) {
      case Activation::ReLU: y = y.cwiseMax(S(0)); break;
      case Activation::PReLU: {
        const S a = prelu_.value(0, 0);
        y = y.unaryExpr([a](S v) { return v > S(0) ? v : a * v; });
        break;
      }
      case Activation::None: break;
    }

    if (cache) {
      cache->batch = batch;
      cache->input = x;
      cache->drop = std::move(drop);
      cache->keep = std::move(keep);
      cache->scaled_in = std::move(h);
      cache->affine_in = std::move(affine_in);
      cache->pre_fast = std::move(pre_fast);
      cache->xhat = std::move(xhat);
      cache->inv_std = std::move(inv_std);
      cache->batch_mean = std::move(mean);
      cache->batch_var = std::move(var);
      cache->pre_act = std::move(pre_act);
    }
    return y;
  }

  // Accumulates parameter gradients and returns d loss / d input.
  Mat<S> backward(const Mat<S>& dy_in, const BlockCache<S>& c, const PassSpec<S>& pass, double temperature) {
    Mat<S> dy = dy_in;
    switch (spec_.activation) {
      case Activation::ReLU: dy = (c.pre_act.array() > S(0)).select(dy, S(0)); break;
      case Activation::PReLU: {
        const S a = prelu_.value(0, 0);
        prelu_.grad(0, 0) += (c.pre_act.array() < S(0)).select(dy.array() * c.pre_act.array(), S(0)).sum();
        dy = (c.pre_act.array() > S(0)).select(dy, a * dy);
        break;
      }
      case Activation::None: break;
    }

    if (spec_.batch_norm) {
      gamma_.grad.col(0) += (dy.array() * c.xhat.array()).rowwise().sum().matrix();
      beta_.grad.col(0) += dy.rowwise().sum();
      Mat<S> dxhat = gamma_.value.col(0).asDiagonal() * dy;
      if (pass.mode == Mode::Train) {
        const S n = static_cast<S>(dy.cols());
        const Vec<S> sum_d = dxhat.rowwise().sum();
        const Vec<S> sum_dx = (dxhat.array() * c.xhat.array()).rowwise().sum().matrix();
        dy = c.inv_std.asDiagonal() *
             ((dxhat * n).colwise() - sum_d - (c.xhat.array().colwise() * sum_dx.array()).matrix()) / n;
      } else {
        dy = c.inv_std.asDiagonal() * dxhat;
      }
    }

    bias_.grad.col(0) += dy.rowwise().sum();
    if (ensemble()) {
      accumulate_member_grad(fast_r_.grad, dy, c.pre_fast, pass.members, out_per_sample());
      scale_by_member(dy, fast_r_.value, pass.members, out_per_sample());
    }
    weight_.grad.noalias() += dy * c.affine_in.transpose();
    Mat<S> dh = weight_.value.transpose() * dy;
    if (spec_.conv) dh = col2im(dh, spec_.geometry, spec_.in_units, c.batch);

    const Eigen::Index vin = in_per_sample();
    if (ensemble()) {
      // scaled_in = gated ⊙ s, so ds uses the gated input (= scaled_in / s, s = ±1 initially but learned).
      Mat<S> gated = c.input;
      if (c.keep.size() > 0)
        for (Eigen::Index b = 0; b < c.batch; ++b) gated.middleCols(b * vin, vin).array().colwise() *= c.keep.col(b).array();
      accumulate_member_grad(fast_s_.grad, dh, gated, pass.members, vin);
      scale_by_member(dh, fast_s_.value, pass.members, vin);
    }

    if (c.keep.size() > 0) {
      // keep = (1 - z) / (1 - p), z = sigmoid((logit_p + logit u) / t):
      // d keep / d logit_p = -z (1 - z) / (t (1 - p)) + keep * p.
      const S p = static_cast<S>(drop_probability());
      const S inv_keep = S(1) / (S(1) - p);
      const S inv_t = static_cast<S>(1.0 / temperature);
      Mat<S> dkeep_dlogit =
          (-(c.drop.array() * (S(1) - c.drop.array())) * inv_t * inv_keep + c.keep.array() * p).matrix();
      S acc = 0;
      for (Eigen::Index b = 0; b < c.batch; ++b) {
        const auto dcols = dh.middleCols(b * vin, vin);
        const auto xcols = c.input.middleCols(b * vin, vin);
        acc += ((dcols.array() * xcols.array()).rowwise().sum() * dkeep_dlogit.col(b).array()).sum();
        dh.middleCols(b * vin, vin).array().colwise() *= c.keep.col(b).array();
      }
      logit_p_.grad(0, 0) += acc;
    }
    return dh;
  }

  // Folds this batch's statistics into the running estimates.
  void update_running_stats(const BlockCache<S>& c, double momentum) {
    if (!spec_.batch_norm || c.batch_mean.size() == 0) return;
    const S n = static_cast<S>(c.pre_fast.cols());
    const S m = static_cast<S>(momentum);
    const S unbias = n > S(1) ? n / (n - S(1)) : S(1);
    running_mean_ = (S(1) - m) * running_mean_ + m * c.batch_mean;
    running_var_ = (S(1) - m) * running_var_ + m * unbias * c.batch_var;
  }

  // Parameter count of the same block without fast weights.
  Eigen::Index shared_parameter_count() const {
    Eigen::Index n = 0;
    for (const Param<S>* p : {&weight_, &bias_, &gamma_, &beta_, &prelu_, &logit_p_}) n += p->size();
    return n;
  }

 private:
  BlockSpec spec_;
  Param<S> weight_, bias_, fast_r_, fast_s_, gamma_, beta_, prelu_, logit_p_;
  Vec<S> running_mean_, running_var_;
};

}  // namespace bvib::nn
