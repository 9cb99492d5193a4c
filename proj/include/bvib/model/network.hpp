#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "bvib/bayes/concrete_dropout.hpp"
#include "bvib/error.hpp"
#include "bvib/model/config.hpp"
#include "bvib/nn/layers.hpp"
#include "bvib/nn/tensor.hpp"
#include "bvib/random.hpp"
#include "bvib/shapegen/volume.hpp"

namespace bvib::model {

using nn::Mat;
using nn::Vec;

inline constexpr double kLogVarMin = -20.0;
inline constexpr double kLogVarMax = 10.0;

// Diagonal Gaussian q(z | x).
struct LatentDist {
  Eigen::VectorXd mu;
  Eigen::VectorXd log_var;
};

// One decoded prediction: mean and per-coordinate log variance, length 3M.
struct PredictiveSample {
  Eigen::VectorXd y_hat;
  Eigen::VectorXd log_var_y;
};

// Train: batch statistics and sampled dropout. Eval: running statistics, no
// dropout. MonteCarlo: running statistics with sampled dropout (uncertainty
// estimation).
enum class RunMode { Train, Eval, MonteCarlo };

// z = mu + exp(log_var / 2) ⊙ eps, eps ~ N(0, I).
inline Eigen::VectorXd reparameterize(const LatentDist& d, Rng& rng) {
  if (d.mu.size() != d.log_var.size()) throw ShapeError("reparameterize: mu and log_var lengths differ");
  Eigen::VectorXd z(d.mu.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = d.mu(i) + std::exp(0.5 * d.log_var(i)) * standard_normal(rng);
  return z;
}

template <typename S>
struct Tape {
  std::vector<nn::BlockCache<S>> encoder;
  std::vector<nn::BlockCache<S>> decoder;
  Mat<S> encoder_raw;  // head output before the log-variance clamp
  Mat<S> decoder_raw;
  std::vector<int> encoder_members, decoder_members;
  nn::Mode encoder_mode = nn::Mode::Eval, decoder_mode = nn::Mode::Eval;
  Eigen::Index conv_channels = 0, conv_voxels = 0;
};

// Drop gates for every dropout site, split by network half.
template <typename S>
struct GateSet {
  std::vector<Mat<S>> encoder;
  std::vector<Mat<S>> decoder;
};

// Stochastic 3D-convolutional encoder q(z | x) and fully connected
// heteroscedastic decoder p(y | z), with the weight treatment chosen by the
// configured variant. Activations and weights use scalar type S; the public
// single-sample operations work in double.
template <typename S>
class VibNetwork {
 public:
  VibNetwork() = default;

  VibNetwork(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = make_rng(seed, 0x5eed);
    const bool cd = uses_dropout(cfg_.variant);
    const int members = uses_batch_ensemble(cfg_.variant) ? cfg_.ensemble_size : 0;

    std::array<int, 3> dims = cfg_.input_dims;
    int in = 1;
    for (std::size_t i = 0; i < cfg_.conv_channels.size(); ++i) {
      nn::BlockSpec s;
      s.name = "encoder.conv" + std::to_string(i);
      s.conv = true;
      s.geometry = nn::ConvGeometry::downsample(dims);
      s.in_units = in;
      s.out_units = cfg_.conv_channels[i];
      s.dropout = cd && i > 0;
      s.batch_norm = true;
      s.activation = nn::Activation::ReLU;
      s.members = members;
      dims = s.geometry.out;
      in = s.out_units;
      encoder_.emplace_back(s, cfg_.init_drop_prob, rng);
    }
    conv_out_voxels_ = Eigen::Index(dims[0]) * dims[1] * dims[2];
    in = static_cast<int>(in * conv_out_voxels_);
    auto dense = [&](std::string name, int in_units, int out_units, bool dropout, nn::Activation act) {
      nn::BlockSpec s;
      s.name = std::move(name);
      s.in_units = in_units;
      s.out_units = out_units;
      s.dropout = dropout;
      s.activation = act;
      s.members = members;
      return nn::Block<S>(s, cfg_.init_drop_prob, rng);
    };
    for (std::size_t i = 0; i < cfg_.encoder_fc.size(); ++i) {
      encoder_.push_back(dense("encoder.fc" + std::to_string(i), in, cfg_.encoder_fc[i], cd, nn::Activation::ReLU));
      in = cfg_.encoder_fc[i];
    }
    encoder_.push_back(dense("encoder.head", in, 2 * cfg_.latent_dim, cd, nn::Activation::None));

    in = cfg_.latent_dim;
    for (std::size_t i = 0; i < cfg_.decoder_fc.size(); ++i) {
      decoder_.push_back(dense("decoder.fc" + std::to_string(i), in, cfg_.decoder_fc[i], cd && i > 0, nn::Activation::PReLU));
      in = cfg_.decoder_fc[i];
    }
    decoder_.push_back(dense("decoder.out", in, 2 * cfg_.output_dim(), cd && !cfg_.decoder_fc.empty(), nn::Activation::None));

    target_mean_ = Eigen::VectorXd::Zero(cfg_.output_dim());
  }

  const ModelConfig& config() const { return cfg_; }
  Variant variant() const { return cfg_.variant; }
  int members() const { return uses_batch_ensemble(cfg_.variant) ? cfg_.ensemble_size : 1; }
  Eigen::Index input_voxels() const { return Eigen::Index(cfg_.input_dims[0]) * cfg_.input_dims[1] * cfg_.input_dims[2]; }

  std::vector<nn::Block<S>>& encoder_blocks() { return encoder_; }
  std::vector<nn::Block<S>>& decoder_blocks() { return decoder_; }
  const std::vector<nn::Block<S>>& encoder_blocks() const { return encoder_; }
  const std::vector<nn::Block<S>>& decoder_blocks() const { return decoder_; }

  template <typename F>
  void for_each_param(F&& f) {
    for (auto& b : encoder_) b.for_each_param(f);
    for (auto& b : decoder_) b.for_each_param(f);
  }
  template <typename F>
  void for_each_param(F&& f) const {
    for (const auto& b : encoder_) b.for_each_param(f);
    for (const auto& b : decoder_) b.for_each_param(f);
  }

  void zero_grad() {
    for_each_param([](nn::Param<S>& p) { p.zero_grad(); });
  }

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for_each_param([&](const nn::Param<S>& p) { n += p.size(); });
    return n;
  }

  // Parameters excluding the rank-1 fast weights.
  Eigen::Index shared_parameter_count() const {
    Eigen::Index n = 0;
    for (const auto& b : encoder_) n += b.shared_parameter_count();
    for (const auto& b : decoder_) n += b.shared_parameter_count();
    return n;
  }

  // ---- normalization (stored with the model) ----
  void set_input_normalization(double mean, double stddev) {
    if (!(stddev > 0.0)) throw DomainError("input normalization: stddev must be positive");
    input_mean_ = mean;
    input_std_ = stddev;
  }
  void set_target_normalization(Eigen::VectorXd mean, double scale) {
    if (mean.size() != cfg_.output_dim() || !(scale > 0.0)) throw ShapeError("target normalization: bad mean/scale");
    target_mean_ = std::move(mean);
    target_scale_ = scale;
  }
  double input_mean() const { return input_mean_; }
  double input_std() const { return input_std_; }
  const Eigen::VectorXd& target_mean() const { return target_mean_; }
  double target_scale() const { return target_scale_; }

  int dataset_size() const { return dataset_size_; }
  void set_dataset_size(int n) {
    if (n < 1) throw DomainError("dataset size must be >= 1");
    dataset_size_ = n;
  }

  // Normalized input batch [1, B * V].
  Mat<S> prepare_input(std::span<const shapegen::Volume* const> volumes) const {
    const Eigen::Index v = input_voxels();
    Mat<S> x(1, v * static_cast<Eigen::Index>(volumes.size()));
    for (std::size_t b = 0; b < volumes.size(); ++b) {
      const auto& vol = *volumes[b];
      if (vol.dims != cfg_.input_dims) throw ShapeError("input volume dims do not match the model");
      for (Eigen::Index i = 0; i < v; ++i)
        x(0, static_cast<Eigen::Index>(b) * v + i) = static_cast<S>((vol.data[static_cast<std::size_t>(i)] - input_mean_) / input_std_);
    }
    return x;
  }

  Mat<S> normalize_targets(std::span<const Eigen::VectorXd> ys) const {
    Mat<S> out(cfg_.output_dim(), static_cast<Eigen::Index>(ys.size()));
    for (std::size_t b = 0; b < ys.size(); ++b) {
      if (ys[b].size() != cfg_.output_dim()) throw ShapeError("target has the wrong length");
      out.col(static_cast<Eigen::Index>(b)) = ((ys[b] - target_mean_) / target_scale_).template cast<S>();
    }
    return out;
  }

  Eigen::VectorXd denormalize_mean(const Eigen::Ref<const Vec<S>>& y) const {
    return target_mean_ + target_scale_ * y.template cast<double>();
  }
  Eigen::VectorXd denormalize_log_var(const Eigen::Ref<const Vec<S>>& lv) const {
    return lv.template cast<double>().array() + 2.0 * std::log(target_scale_);
  }

  // ---- batched passes ----
  GateSet<S> sample_gates(Eigen::Index batch, Rng& rng) const {
    GateSet<S> g;
    for (const auto& b : encoder_)
      if (b.has_dropout()) g.encoder.push_back(b.sample_gates(batch, cfg_.temperature, rng));
    for (const auto& b : decoder_)
      if (b.has_dropout()) g.decoder.push_back(b.sample_gates(batch, cfg_.temperature, rng));
    return g;
  }

  struct Encoded {
    Mat<S> mu;       // [L, B]
    Mat<S> log_var;  // [L, B], clamped
  };
  struct Decoded {
    Mat<S> y_hat;    // [3M, B], normalized target space
    Mat<S> log_var;  // [3M, B], clamped
  };

  Encoded encode(const Mat<S>& x, const nn::PassSpec<S>& pass, Tape<S>* tape = nullptr) const {
    check_members(pass, x.cols() / std::max<Eigen::Index>(1, input_voxels()));
    if (tape) {
      tape->encoder.assign(encoder_.size(), {});
      tape->encoder_members.assign(pass.members.begin(), pass.members.end());
      tape->encoder_mode = pass.mode;
    }
    Mat<S> h = x;
    std::size_t site = 0;
    const std::size_t n_conv = cfg_.conv_channels.size();
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
      if (i == n_conv) h = flatten(h);
      const Mat<S>* gate = fixed_gate(pass, encoder_[i], site);
      h = encoder_[i].forward(h, pass, cfg_.temperature, gate, tape ? &tape->encoder[i] : nullptr);
    }
    const Eigen::Index l = cfg_.latent_dim;
    Encoded out;
    out.mu = h.topRows(l);
    out.log_var = h.bottomRows(l).cwiseMax(S(kLogVarMin)).cwiseMin(S(kLogVarMax));
    if (tape) {
      tape->encoder_raw = std::move(h);
      tape->conv_channels = cfg_.conv_channels.back();
      tape->conv_voxels = conv_out_voxels_;
    }
    return out;
  }

  Decoded decode(const Mat<S>& z, const nn::PassSpec<S>& pass, Tape<S>* tape = nullptr) const {
    if (z.rows() != cfg_.latent_dim) throw ShapeError("decode: latent has " + std::to_string(z.rows()) + " rows");
    check_members(pass, z.cols());
    if (tape) {
      tape->decoder.assign(decoder_.size(), {});
      tape->decoder_members.assign(pass.members.begin(), pass.members.end());
      tape->decoder_mode = pass.mode;
    }
    Mat<S> h = z;
    std::size_t site = 0;
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
      const Mat<S>* gate = fixed_gate(pass, decoder_[i], site);
      h = decoder_[i].forward(h, pass, cfg_.temperature, gate, tape ? &tape->decoder[i] : nullptr);
    }
    const Eigen::Index d = cfg_.output_dim();
    Decoded out;
    out.y_hat = h.topRows(d);
    out.log_var = h.bottomRows(d).cwiseMax(S(kLogVarMin)).cwiseMin(S(kLogVarMax));
    if (tape) tape->decoder_raw = std::move(h);
    return out;
  }

  // Gradients w.r.t. the decoded (y_hat, clamped log_var); returns d/dz.
  Mat<S> backward_decode(const Tape<S>& tape, const Mat<S>& d_y_hat, const Mat<S>& d_log_var) {
    const Eigen::Index d = cfg_.output_dim();
    Mat<S> g(2 * d, d_y_hat.cols());
    g.topRows(d) = d_y_hat;
    g.bottomRows(d) = clamp_mask(tape.decoder_raw.bottomRows(d), d_log_var);
    nn::PassSpec<S> pass;
    pass.mode = tape.decoder_mode;
    pass.members = tape.decoder_members;
    for (std::size_t i = decoder_.size(); i-- > 0;) g = decoder_[i].backward(g, tape.decoder[i], pass, cfg_.temperature);
    return g;
  }

  // Returns d/dx of the normalized input batch.
  Mat<S> backward_encode(const Tape<S>& tape, const Mat<S>& d_mu, const Mat<S>& d_log_var) {
    const Eigen::Index l = cfg_.latent_dim;
    Mat<S> g(2 * l, d_mu.cols());
    g.topRows(l) = d_mu;
    g.bottomRows(l) = clamp_mask(tape.encoder_raw.bottomRows(l), d_log_var);
    nn::PassSpec<S> pass;
    pass.mode = tape.encoder_mode;
    pass.members = tape.encoder_members;
    const std::size_t n_conv = cfg_.conv_channels.size();
    for (std::size_t i = encoder_.size(); i-- > 0;) {
      g = encoder_[i].backward(g, tape.encoder[i], pass, cfg_.temperature);
      if (i == n_conv) g = unflatten(g, tape.conv_channels, tape.conv_voxels);
    }
    return g;
  }

  void update_running_stats(const Tape<S>& tape) {
    for (std::size_t i = 0; i < encoder_.size() && i < tape.encoder.size(); ++i)
      encoder_[i].update_running_stats(tape.encoder[i], cfg_.bn_momentum);
  }

  // Weight-space KL for the concrete-dropout variants (0 otherwise); adds its
  // gradient to the parameter accumulators when requested.
  double weight_kl(bool accumulate_grad) {
    double total = 0.0;
    auto visit = [&](nn::Block<S>& b) {
      if (!b.has_dropout()) return;
      const auto r = bayes::cd_layer_regularizer(static_cast<double>(b.logit_p().value(0, 0)),
                                                 static_cast<double>(b.weight().value.squaredNorm()), b.spec().in_units,
                                                 cfg_.length_scale, dataset_size_);
      total += r.value;
      if (accumulate_grad) {
        b.logit_p().grad(0, 0) += static_cast<S>(r.d_logit_p);
        b.weight().grad += static_cast<S>(r.d_weight_scale) * b.weight().value;
      }
    };
    for (auto& b : encoder_) visit(b);
    for (auto& b : decoder_) visit(b);
    return total;
  }

  std::vector<double> drop_probabilities() const {
    std::vector<double> p;
    for (const auto& b : encoder_)
      if (b.has_dropout()) p.push_back(b.drop_probability());
    for (const auto& b : decoder_)
      if (b.has_dropout()) p.push_back(b.drop_probability());
    return p;
  }

  // ---- single-sample operations (double precision interface) ----
  LatentDist encode(const shapegen::Volume& x, RunMode mode, std::optional<int> member = std::nullopt,
                    Rng* rng = nullptr) const {
    const shapegen::Volume* ptr = &x;
    const auto batch = prepare_input(std::span<const shapegen::Volume* const>(&ptr, 1));
    std::vector<int> m = member_vector(member);
    const auto e = encode(batch, pass_for(mode, m, rng));
    return {e.mu.col(0).template cast<double>(), e.log_var.col(0).template cast<double>()};
  }

  // Decodes in target units (normalization undone).
  PredictiveSample decode(const Eigen::VectorXd& z, RunMode mode, std::optional<int> member = std::nullopt,
                          Rng* rng = nullptr) const {
    if (z.size() != cfg_.latent_dim) throw ShapeError("decode: latent has length " + std::to_string(z.size()));
    std::vector<int> m = member_vector(member);
    const auto d = decode(Mat<S>(z.template cast<S>()), pass_for(mode, m, rng));
    return {denormalize_mean(d.y_hat.col(0)), denormalize_log_var(d.log_var.col(0))};
  }

  // Encode once, then decode n_latent_samples reparameterized draws, or the
  // latent mean when use_mean is set (n_latent_samples must then be 1).
  std::vector<PredictiveSample> forward(const shapegen::Volume& x, int n_latent_samples, Rng& rng,
                                        RunMode mode = RunMode::Eval, bool use_mean = false,
                                        std::optional<int> member = std::nullopt) const {
    if (n_latent_samples < 1) throw DomainError("forward: n_latent_samples must be >= 1");
    if (use_mean && n_latent_samples != 1) throw DomainError("forward: use_mean requires n_latent_samples = 1");
    const LatentDist q = encode(x, mode, member, &rng);
    std::vector<PredictiveSample> out;
    for (int i = 0; i < n_latent_samples; ++i) {
      const Eigen::VectorXd z = use_mean ? q.mu : reparameterize(q, rng);
      out.push_back(decode(z, mode, member, &rng));
    }
    return out;
  }

  nn::PassSpec<S> pass_for(RunMode mode, std::span<const int> members, Rng* rng) const {
    nn::PassSpec<S> p;
    p.mode = mode == RunMode::Train ? nn::Mode::Train : nn::Mode::Eval;
    p.dropout = (mode == RunMode::Eval || !uses_dropout(cfg_.variant)) ? nn::DropoutMode::Off : nn::DropoutMode::Sample;
    p.members = members;
    p.rng = rng;
    if (p.dropout == nn::DropoutMode::Sample && rng == nullptr) throw DomainError("dropout sampling requires an rng");
    return p;
  }

 private:
  std::vector<int> member_vector(std::optional<int> member) const {
    if (uses_batch_ensemble(cfg_.variant)) {
      if (!member) throw DomainError("batch-ensemble variants require a member index");
      return {*member};
    }
    if (member) throw DomainError("member index given for a non batch-ensemble variant");
    return {};
  }

  void check_members(const nn::PassSpec<S>& pass, Eigen::Index batch) const {
    if (uses_batch_ensemble(cfg_.variant)) {
      if (static_cast<Eigen::Index>(pass.members.size()) != batch)
        throw DomainError("batch-ensemble variants require one member index per sample");
      for (int k : pass.members)
        if (k < 0 || k >= cfg_.ensemble_size) throw DomainError("ensemble member index out of range");
    } else if (!pass.members.empty()) {
      throw DomainError("member indices given for a non batch-ensemble variant");
    }
  }

  const Mat<S>* fixed_gate(const nn::PassSpec<S>& pass, const nn::Block<S>& block, std::size_t& site) const {
    if (!block.has_dropout() || pass.dropout != nn::DropoutMode::Fixed) {
      if (block.has_dropout()) ++site;
      return nullptr;
    }
    if (pass.fixed_gates == nullptr || site >= pass.fixed_gates->size()) throw ShapeError("missing fixed drop gates");
    return &(*pass.fixed_gates)[site++];
  }

  // [C, B * V] -> [C * V, B]: same storage order.
  Mat<S> flatten(const Mat<S>& h) const {
    return h.reshaped(h.rows() * conv_out_voxels_, h.cols() / conv_out_voxels_);
  }

  static Mat<S> unflatten(const Mat<S>& g, Eigen::Index channels, Eigen::Index voxels) {
    return g.reshaped(channels, g.cols() * voxels);
  }

  static Mat<S> clamp_mask(const Mat<S>& raw, const Mat<S>& grad) {
    return (raw.array() > S(kLogVarMin) && raw.array() < S(kLogVarMax)).select(grad, S(0));
  }

  ModelConfig cfg_;
  std::vector<nn::Block<S>> encoder_;
  std::vector<nn::Block<S>> decoder_;
  Eigen::Index conv_out_voxels_ = 1;
  double input_mean_ = 0.0;
  double input_std_ = 1.0;
  Eigen::VectorXd target_mean_;
  double target_scale_ = 1.0;
  int dataset_size_ = 1;
};

}  // namespace bvib::model
