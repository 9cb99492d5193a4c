#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bvib/error.hpp"
#include "bvib/inference/uncertainty.hpp"
#include "bvib/model/network.hpp"
#include "bvib/random.hpp"
#include "bvib/shapegen/volume.hpp"

namespace bvib::inference {

struct InferenceConfig {
  int mask_draws = 30;      // dropout masks per member (dropout variants)
  int latent_samples = 16;  // latent draws per weight draw for the aleatoric term

  void validate() const {
    if (mask_draws < 1 || latent_samples < 1) throw ConfigError("inference: mask_draws and latent_samples must be >= 1");
  }
  Json to_json() const { return Json{{"mask_draws", mask_draws}, {"latent_samples", latent_samples}}; }
  static InferenceConfig from_json(const Json& j) {
    ConfigReader r(j, "inference");
    r.allow_only({"mask_draws", "latent_samples"});
    InferenceConfig c;
    r.get("mask_draws", c.mask_draws);
    r.get("latent_samples", c.latent_samples);
    c.validate();
    return c;
  }
};

// Number of weight draws T for a variant.
inline int weight_draws(model::Variant v, int members, const InferenceConfig& cfg) {
  const int masks = model::uses_dropout(v) ? cfg.mask_draws : 1;
  return (model::is_ensemble(v) ? members : 1) * masks;
}

// Draws T = (members) x (masks) predictions. Each draw decodes the latent mean
// for y_hat; sigma2 is the mean decoder variance over latent_samples draws plus
// the variance of their decoded means. Outputs are in target units.
template <typename S>
SampleSet predict_samples(std::span<const model::VibNetwork<S>* const> nets, const shapegen::Volume& x,
                          const InferenceConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (nets.empty()) throw DomainError("predict_samples: no model loaded");
  const model::Variant v = nets[0]->variant();
  for (const auto* n : nets)
    if (n->variant() != v || n->config().output_dim() != nets[0]->config().output_dim())
      throw DomainError("predict_samples: ensemble members disagree on variant or output size");
  if (model::is_naive_ensemble(v) ? nets.size() < 2 : nets.size() != 1)
    throw DomainError("predict_samples: " + model::to_string(v) + " expects " +
                      (model::is_naive_ensemble(v) ? std::string("at least 2 networks") : std::string("one network")));

  const bool dropout = model::uses_dropout(v);
  const int masks = dropout ? cfg.mask_draws : 1;
  const int j = cfg.latent_samples;
  const int d = nets[0]->config().output_dim();
  std::vector<int> member_ids;
  for (int m = 0; m < (model::is_naive_ensemble(v) ? static_cast<int>(nets.size()) : nets[0]->members()); ++m)
    member_ids.push_back(m);

  SampleSet out;
  const Eigen::Index total = static_cast<Eigen::Index>(member_ids.size()) * masks;
  out.y_hat.resize(d, total);
  out.sigma2.resize(d, total);
  const shapegen::Volume* ptr = &x;

  Eigen::Index col = 0;
  for (int m : member_ids) {
    const auto& net = model::is_naive_ensemble(v) ? *nets[static_cast<std::size_t>(m)] : *nets[0];
    const int l = net.config().latent_dim;
    const nn::Mat<S> x1 = net.prepare_input(std::span<const shapegen::Volume* const>(&ptr, 1));
    const nn::Mat<S> xb = x1.replicate(1, masks);

    // Per-draw streams: gates, then latent noise, from the same tagged seed.
    std::vector<Rng> rngs;
    std::vector<std::uint64_t> seeds;
    for (int t = 0; t < masks; ++t) {
      seeds.push_back(derive_seed(seed, static_cast<std::uint64_t>(m) * 100003u + static_cast<std::uint64_t>(t)));
      rngs.push_back(make_rng(seeds.back()));
    }
    model::GateSet<S> enc_gates, dec_gates;
    if (dropout) {
      for (const auto* blocks : {&net.encoder_blocks(), &net.decoder_blocks()})
        for (const auto& b : *blocks) {
          if (!b.has_dropout()) continue;
          nn::Mat<S> g(b.spec().in_units, masks);
          for (int t = 0; t < masks; ++t)
            g.col(t) = b.sample_gates(1, net.config().temperature, rngs[static_cast<std::size_t>(t)]);
          (blocks == &net.encoder_blocks() ? enc_gates.encoder : dec_gates.decoder).push_back(std::move(g));
        }
      // Decoder columns are grouped per draw: [mean, z_1 .. z_J].
      for (auto& g : dec_gates.decoder) {
        nn::Mat<S> wide(g.rows(), static_cast<Eigen::Index>(masks) * (j + 1));
        for (int t = 0; t < masks; ++t) wide.middleCols(t * (j + 1), j + 1) = g.col(t).replicate(1, j + 1);
        g = std::move(wide);
      }
    }
    const std::vector<int> enc_members(model::uses_batch_ensemble(v) ? static_cast<std::size_t>(masks) : 0u, m);
    const std::vector<int> dec_members(model::uses_batch_ensemble(v) ? static_cast<std::size_t>(masks * (j + 1)) : 0u, m);

    nn::PassSpec<S> pass;
    pass.mode = nn::Mode::Eval;
    pass.dropout = dropout ? nn::DropoutMode::Fixed : nn::DropoutMode::Off;
    pass.members = enc_members;
    pass.fixed_gates = &enc_gates.encoder;
    const auto e = net.encode(xb, pass);

    nn::Mat<S> z(l, static_cast<Eigen::Index>(masks) * (j + 1));
    for (int t = 0; t < masks; ++t) {
      auto& rng = rngs[static_cast<std::size_t>(t)];
      z.col(t * (j + 1)) = e.mu.col(t);
      for (int s = 1; s <= j; ++s)
        for (int i = 0; i < l; ++i)
          z(i, t * (j + 1) + s) =
              e.mu(i, t) + std::exp(S(0.5) * e.log_var(i, t)) * static_cast<S>(standard_normal(rng));
    }
    pass.members = dec_members;
    pass.fixed_gates = &dec_gates.decoder;
    const auto dec = net.decode(z, pass);

    const double scale2 = net.target_scale() * net.target_scale();
    for (int t = 0; t < masks; ++t, ++col) {
      const Eigen::Index base = t * (j + 1);
      out.y_hat.col(col) = net.denormalize_mean(dec.y_hat.col(base));
      const Eigen::MatrixXd draws = dec.y_hat.middleCols(base + 1, j).template cast<double>();
      const Eigen::VectorXd dmean = draws.rowwise().mean();
      const Eigen::VectorXd spread = (draws.colwise() - dmean).array().square().rowwise().mean();
      const Eigen::VectorXd dvar =
          dec.log_var.middleCols(base + 1, j).template cast<double>().array().exp().rowwise().mean();
      out.sigma2.col(col) = scale2 * (dvar + spread);
      out.tags.push_back({m, seeds[static_cast<std::size_t>(t)]});
    }
  }
  out.validate();
  return out;
}

template <typename S>
SampleSet predict_samples(const model::VibNetwork<S>& net, const shapegen::Volume& x, const InferenceConfig& cfg,
                          std::uint64_t seed) {
  const model::VibNetwork<S>* p = &net;
  return predict_samples<S>(std::span<const model::VibNetwork<S>* const>(&p, 1), x, cfg, seed);
}

}  // namespace bvib::inference
