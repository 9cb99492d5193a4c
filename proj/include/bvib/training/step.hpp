#pragma once

#include <span>

#include "bvib/model/network.hpp"
#include "bvib/objectives/losses.hpp"

namespace bvib::training {

using nn::Mat;

template <typename S>
struct StepOptions {
  double alpha = 1.0;
  double beta = 0.01;
  nn::Mode mode = nn::Mode::Train;
  nn::DropoutMode dropout = nn::DropoutMode::Off;
  Rng* rng = nullptr;                     // dropout sampling
  const model::GateSet<S>* gates = nullptr;  // DropoutMode::Fixed
  bool include_weight_kl = true;
};

// Forward pass of one batch with reparameterized latent z = mu + exp(log_var / 2) eps
// and the blended loss; fills parameter gradients (zeroed first) when grad is set.
template <typename S>
objectives::LossBreakdown loss_and_grad(model::VibNetwork<S>& net, const Mat<S>& x, const Mat<S>& y,
                                        std::span<const int> members, const Mat<S>& eps,
                                        const StepOptions<S>& opt, bool grad, model::Tape<S>* tape_out = nullptr) {
  model::Tape<S> local;
  model::Tape<S>& tape = tape_out ? *tape_out : local;
  nn::PassSpec<S> enc;
  enc.mode = opt.mode;
  enc.dropout = model::uses_dropout(net.variant()) ? opt.dropout : nn::DropoutMode::Off;
  enc.members = members;
  enc.rng = opt.rng;
  nn::PassSpec<S> dec = enc;
  if (opt.gates) {
    enc.fixed_gates = &opt.gates->encoder;
    dec.fixed_gates = &opt.gates->decoder;
  }

  const auto e = net.encode(x, enc, &tape);
  if (eps.rows() != e.mu.rows() || eps.cols() != e.mu.cols()) throw ShapeError("loss_and_grad: eps shape mismatch");
  const Mat<S> sd = (e.log_var.array() * S(0.5)).exp().matrix();
  const Mat<S> z = e.mu + sd.cwiseProduct(eps);
  const auto d = net.decode(z, dec, &tape);
  auto bl = objectives::batch_loss<S>(y, d.y_hat, d.log_var, e.mu, e.log_var, opt.beta, opt.alpha);

  const bool wkl = opt.include_weight_kl && model::uses_dropout(net.variant());
  if (grad) net.zero_grad();
  if (wkl) bl.loss.weight_kl = net.weight_kl(grad);
  bl.loss.total = objectives::blend(bl.loss, opt.beta);
  if (!grad) return bl.loss;

  const Mat<S> dz = net.backward_decode(tape, bl.d_y_hat, bl.d_log_var_y);
  const Mat<S> d_mu = bl.d_mu + dz;
  const Mat<S> d_lv = bl.d_log_var_z + (dz.cwiseProduct(sd).cwiseProduct(eps) * S(0.5));
  net.backward_encode(tape, d_mu, d_lv);
  return bl.loss;
}

}  // namespace bvib::training
