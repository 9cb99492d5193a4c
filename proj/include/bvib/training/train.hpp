#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "bvib/config_io.hpp"
#include "bvib/error.hpp"
#include "bvib/eval/metrics.hpp"
#include "bvib/model/network.hpp"
#include "bvib/nn/adam.hpp"
#include "bvib/objectives/losses.hpp"
#include "bvib/training/data.hpp"
#include "bvib/training/step.hpp"

namespace bvib::training {

using Net = model::VibNetwork<float>;

struct TrainConfig {
  double lr = 5e-5;
  int batch_size = 6;
  int patience = 50;
  int max_epochs = 2000;
  double clip_norm = 10.0;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  objectives::LossConfig loss;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (patience < 1) throw ConfigError("train: patience must be >= 1");
    if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
    if (!(clip_norm > 0.0)) throw ConfigError("train: clip_norm must be positive");
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be >= 0");
    loss.validate();
  }

  Json to_json() const {
    return Json{{"lr", lr},
                {"batch_size", batch_size},
                {"patience", patience},
                {"max_epochs", max_epochs},
                {"clip_norm", clip_norm},
                {"weight_decay", weight_decay},
                {"seed", seed},
                {"loss", loss.to_json()}};
  }
  static TrainConfig from_json(const Json& j) {
    ConfigReader r(j, "train");
    r.allow_only({"lr", "batch_size", "patience", "max_epochs", "clip_norm", "weight_decay", "seed", "loss"});
    TrainConfig c;
    r.get("lr", c.lr);
    r.get("batch_size", c.batch_size);
    r.get("patience", c.patience);
    r.get("max_epochs", c.max_epochs);
    r.get("clip_norm", c.clip_norm);
    r.get("weight_decay", c.weight_decay);
    r.get("seed", c.seed);
    if (r.has("loss")) c.loss = objectives::LossConfig::from_json(r.raw().at("loss"));
    c.validate();
    return c;
  }
};

// Training members assigned round-robin within a batch.
inline std::vector<int> be_batch_routing(int batch, int members) {
  if (batch < 1) throw DomainError("be_batch_routing: batch must be >= 1");
  if (members < 1) throw DomainError("be_batch_routing: members must be >= 1");
  std::vector<int> m(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) m[static_cast<std::size_t>(b)] = b % members;
  return m;
}

// Inference: each input replicated once per member.
inline std::vector<int> be_inference_routing(int members) { return be_batch_routing(members, members); }

struct EpochRecord {
  int epoch = 0;
  objectives::LossBreakdown train;
  objectives::LossBreakdown val;
  double val_rmse = 0.0;
  bool dropout_active = false;
  std::vector<double> drop_probabilities;
};

struct TrainResult {
  Net best;
  int best_epoch = -1;
  double best_val_rmse = std::numeric_limits<double>::infinity();
  int epochs_run = 0;
  int epochs_since_improvement = 0;
  std::string stop_reason;
  std::vector<EpochRecord> history;
  nn::AdamState<float> optimizer;
};

inline std::string loss_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,split,total,nll,latent_kl,weight_kl,l2,alpha,rmse\n";
  char buf[256];
  for (const auto& h : history) {
    for (int s = 0; s < 2; ++s) {
      const auto& b = s == 0 ? h.train : h.val;
      std::snprintf(buf, sizeof buf, "%d,%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.6g,%s\n", h.epoch, s == 0 ? "train" : "val", b.total,
                    b.nll, b.latent_kl, b.weight_kl, b.l2, b.burnin_alpha,
                    s == 0 ? "" : std::to_string(h.val_rmse).c_str());
      out += buf;
    }
  }
  return out;
}

struct SplitEval {
  std::vector<Eigen::VectorXd> predictions;  // target units
  objectives::LossBreakdown loss;            // latent mean, no weight KL
};

// Point estimates with latent mean, no dropout and running batch-norm statistics;
// batch-ensemble members are averaged (the loss is averaged over members).
inline SplitEval evaluate_split(const Net& net, const std::vector<Example>& data, double alpha = 1.0, double beta = 0.0,
                                int chunk = 16) {
  SplitEval out;
  out.loss.burnin_alpha = alpha;
  const int k = net.members();
  double weight = 0.0;
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(chunk)) {
    const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(chunk));
    std::vector<const shapegen::Volume*> vols;
    std::vector<Eigen::VectorXd> ys;
    std::vector<int> members;
    for (std::size_t i = start; i < end; ++i)
      for (int m = 0; m < k; ++m) {
        vols.push_back(&data[i].image);
        ys.push_back(data[i].target);
        if (model::uses_batch_ensemble(net.variant())) members.push_back(m);
      }
    const nn::Mat<float> x = net.prepare_input(vols);
    nn::PassSpec<float> pass;
    pass.members = members;
    const auto e = net.encode(x, pass);
    const auto d = net.decode(e.mu, pass);
    const auto b = objectives::batch_loss<float>(net.normalize_targets(ys), d.y_hat, d.log_var, e.mu, e.log_var, beta, alpha).loss;
    const double w = static_cast<double>(ys.size());
    out.loss.nll += w * b.nll;
    out.loss.l2 += w * b.l2;
    out.loss.latent_kl += w * b.latent_kl;
    weight += w;
    for (std::size_t i = start; i < end; ++i) {
      const auto c = static_cast<Eigen::Index>((i - start) * static_cast<std::size_t>(k));
      out.predictions.push_back(net.denormalize_mean(d.y_hat.middleCols(c, k).rowwise().mean()));
    }
  }
  if (weight > 0) {
    out.loss.nll /= weight;
    out.loss.l2 /= weight;
    out.loss.latent_kl /= weight;
  }
  out.loss.total = objectives::blend(out.loss, beta);
  return out;
}

inline std::vector<Eigen::VectorXd> predict_means(const Net& net, const std::vector<Example>& data) {
  return evaluate_split(net, data).predictions;
}

inline double mean_rmse(const std::vector<Eigen::VectorXd>& pred, const std::vector<Example>& data) {
  double s = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) s += eval::rmse(data[i].target, pred[i]);
  return s / static_cast<double>(data.size());
}

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
};

// Adam on the blended objective with linear burn-in, a dropout burn-in for the
// concrete-dropout variants and early stopping on validation RMSE. Checkpoints
// are only eligible once both burn-in phases are over.
inline TrainResult train(const model::ModelConfig& model_cfg, const std::vector<Example>& train_set,
                         const std::vector<Example>& val_set, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  model_cfg.validate();
  if (train_set.empty()) throw DomainError("train: empty training set");
  if (val_set.empty()) throw DomainError("train: empty validation set");

  Net net(model_cfg, cfg.seed);
  const Normalization norm = fit_normalization(train_set);
  net.set_input_normalization(norm.input_mean, norm.input_std);
  net.set_target_normalization(norm.target_mean, norm.target_scale);
  net.set_dataset_size(static_cast<int>(train_set.size()));

  nn::AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.weight_decay = cfg.weight_decay;
  nn::Adam<float> adam(acfg);
  Rng shuffle_rng = make_rng(cfg.seed, 1);
  Rng noise_rng = make_rng(cfg.seed, 2);
  Rng gate_rng = make_rng(cfg.seed, 3);

  const bool cd = model::uses_dropout(model_cfg.variant);
  const bool be = model::uses_batch_ensemble(model_cfg.variant);
  const int eligible_from = std::max(cfg.loss.burnin_end, cd ? cfg.loss.dropout_burnin_end : 0);

  TrainResult result;
  result.best = net;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  int nan_streak = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double alpha = objectives::burnin_alpha(epoch, cfg.loss);
    const bool dropout_on = cd && epoch >= cfg.loss.dropout_burnin_end;
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    StepOptions<float> opt;
    opt.alpha = alpha;
    opt.beta = cfg.loss.beta;
    opt.mode = nn::Mode::Train;
    opt.dropout = dropout_on ? nn::DropoutMode::Sample : nn::DropoutMode::Off;
    opt.rng = &gate_rng;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.dropout_active = dropout_on;
    double steps = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const int batch = static_cast<int>(end - start);
      std::vector<const shapegen::Volume*> vols;
      std::vector<Eigen::VectorXd> ys;
      for (std::size_t i = start; i < end; ++i) {
        vols.push_back(&train_set[order[i]].image);
        ys.push_back(train_set[order[i]].target);
      }
      const nn::Mat<float> x = net.prepare_input(vols);
      const nn::Mat<float> y = net.normalize_targets(ys);
      nn::Mat<float> eps(model_cfg.latent_dim, batch);
      for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = static_cast<float>(standard_normal(noise_rng));
      const std::vector<int> members = be ? be_batch_routing(batch, model_cfg.ensemble_size) : std::vector<int>{};

      model::Tape<float> tape;
      const auto loss = loss_and_grad(net, x, y, members, eps, opt, true, &tape);
      bool finite = std::isfinite(loss.total);
      if (finite) {
        const double gnorm = nn::clip_grad_norm<float>(net, cfg.clip_norm);
        finite = std::isfinite(gnorm);
      }
      if (!finite) {
        if (++nan_streak >= 3)
          throw RuntimeFailure("train: loss diverged (non-finite for 3 consecutive steps) at epoch " + std::to_string(epoch));
        continue;
      }
      nan_streak = 0;
      adam.step(net, [&](const std::string& name) { return !dropout_on && name.ends_with(".logit_p"); });
      net.update_running_stats(tape);

      rec.train.total += loss.total;
      rec.train.nll += loss.nll;
      rec.train.latent_kl += loss.latent_kl;
      rec.train.weight_kl += loss.weight_kl;
      rec.train.l2 += loss.l2;
      steps += 1.0;
    }
    if (steps > 0) {
      rec.train.total /= steps;
      rec.train.nll /= steps;
      rec.train.latent_kl /= steps;
      rec.train.weight_kl /= steps;
      rec.train.l2 /= steps;
    }
    rec.train.burnin_alpha = alpha;
    const SplitEval ve = evaluate_split(net, val_set, alpha, cfg.loss.beta);
    rec.val = ve.loss;
    rec.val_rmse = mean_rmse(ve.predictions, val_set);
    rec.drop_probabilities = net.drop_probabilities();
    result.history.push_back(rec);
    result.epochs_run = epoch + 1;
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (!std::isfinite(rec.val_rmse)) throw RuntimeFailure("train: validation RMSE is not finite at epoch " + std::to_string(epoch));

    if (epoch < eligible_from) continue;
    if (rec.val_rmse < result.best_val_rmse) {
      result.best_val_rmse = rec.val_rmse;
      result.best_epoch = epoch;
      result.best = net;
      result.epochs_since_improvement = 0;
    } else if (++result.epochs_since_improvement >= cfg.patience) {
      result.stop_reason = "patience";
      break;
    }
  }
  if (result.stop_reason.empty()) result.stop_reason = "max_epochs";
  if (result.best_epoch < 0) {
    // The cap ended training inside burn-in; keep the final weights.
    result.best = net;
    result.best_epoch = result.epochs_run - 1;
    result.best_val_rmse = result.history.back().val_rmse;
  }
  result.optimizer = adam.state();
  return result;
}

// K independent runs with seeds seed + k.
inline std::vector<TrainResult> train_naive_ensemble(const model::ModelConfig& model_cfg, const std::vector<Example>& train_set,
                                                     const std::vector<Example>& val_set, const TrainConfig& cfg, int members,
                                                     const TrainHooks& hooks = {}) {
  if (members < 2) throw DomainError("train_naive_ensemble: need at least 2 members");
  std::vector<TrainResult> out;
  for (int k = 0; k < members; ++k) {
    TrainConfig c = cfg;
    c.seed = cfg.seed + static_cast<std::uint64_t>(k);
    try {
      out.push_back(train(model_cfg, train_set, val_set, c, hooks));
    } catch (const RuntimeFailure& e) {
      throw RuntimeFailure("ensemble member " + std::to_string(k) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace bvib::training
