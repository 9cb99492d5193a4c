#pragma once

#include <array>
#include <string>
#include <vector>

#include "bvib/config_io.hpp"
#include "bvib/error.hpp"

namespace bvib::model {

// VIB: deterministic-weight baseline. CD: concrete dropout. BE: batch ensemble.
// NE: naive ensemble of VIB networks. NE_CD / BE_CD: ensembles with concrete dropout.
enum class Variant { VIB, CD, BE, NE, NE_CD, BE_CD };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::VIB: return "VIB";
    case Variant::CD: return "CD";
    case Variant::BE: return "BE";
    case Variant::NE: return "NE";
    case Variant::NE_CD: return "NE-CD";
    case Variant::BE_CD: return "BE-CD";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  for (Variant v : {Variant::VIB, Variant::CD, Variant::BE, Variant::NE, Variant::NE_CD, Variant::BE_CD})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown variant '" + s + "' (expected VIB, CD, BE, NE, NE-CD or BE-CD)");
}

inline bool uses_dropout(Variant v) { return v == Variant::CD || v == Variant::NE_CD || v == Variant::BE_CD; }
inline bool uses_batch_ensemble(Variant v) { return v == Variant::BE || v == Variant::BE_CD; }
inline bool is_naive_ensemble(Variant v) { return v == Variant::NE || v == Variant::NE_CD; }
inline bool is_ensemble(Variant v) { return uses_batch_ensemble(v) || is_naive_ensemble(v); }

struct ModelConfig {
  std::array<int, 3> input_dims{32, 32, 32};
  int latent_dim = 32;
  int n_points = 64;
  std::vector<int> conv_channels{12, 24, 48, 96, 192};
  std::vector<int> encoder_fc{96};
  std::vector<int> decoder_fc{256, 512};
  Variant variant = Variant::VIB;
  int ensemble_size = 4;
  double temperature = 0.1;
  double init_drop_prob = 0.1;
  double length_scale = 1e-3;
  double bn_momentum = 0.1;

  int output_dim() const { return 3 * n_points; }

  void validate() const {
    for (int d : input_dims)
      if (d < 1) throw ConfigError("model: input dims must be positive");
    if (latent_dim < 1 || n_points < 1) throw ConfigError("model: latent_dim and n_points must be positive");
    if (4 * latent_dim > 3 * n_points) throw ConfigError("model: latent_dim must be <= 3M/4");
    if (conv_channels.empty()) throw ConfigError("model: need at least one conv layer");
    for (int c : conv_channels)
      if (c < 1) throw ConfigError("model: conv channel widths must be positive");
    for (int w : encoder_fc)
      if (w < 1) throw ConfigError("model: encoder_fc widths must be positive");
    for (int w : decoder_fc)
      if (w < 1) throw ConfigError("model: decoder_fc widths must be positive");
    if (is_ensemble(variant) && ensemble_size < 2) throw ConfigError("model: ensemble variants need ensemble_size >= 2");
    if (!(temperature > 0.0 && temperature <= 1.0)) throw ConfigError("model: temperature must lie in (0, 1]");
    if (!(init_drop_prob > 0.0 && init_drop_prob <= 0.5)) throw ConfigError("model: init_drop_prob must lie in (0, 0.5]");
    if (!(length_scale > 0.0)) throw ConfigError("model: length_scale must be positive");
    if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ConfigError("model: bn_momentum must lie in (0, 1]");
  }

  Json to_json() const {
    return Json{{"input_dims", input_dims},       {"latent_dim", latent_dim},
                {"n_points", n_points},           {"conv_channels", conv_channels},
                {"encoder_fc", encoder_fc},       {"decoder_fc", decoder_fc},
                {"variant", to_string(variant)},  {"ensemble_size", ensemble_size},
                {"temperature", temperature},     {"init_drop_prob", init_drop_prob},
                {"length_scale", length_scale},   {"bn_momentum", bn_momentum}};
  }

  static ModelConfig from_json(const Json& j) {
    ConfigReader r(j, "model");
    r.allow_only({"input_dims", "latent_dim", "n_points", "conv_channels", "encoder_fc", "decoder_fc", "variant",
                  "ensemble_size", "temperature", "init_drop_prob", "length_scale", "bn_momentum"});
    ModelConfig c;
    r.get("input_dims", c.input_dims);
    r.get("latent_dim", c.latent_dim);
    r.get("n_points", c.n_points);
    r.get("conv_channels", c.conv_channels);
    r.get("encoder_fc", c.encoder_fc);
    r.get("decoder_fc", c.decoder_fc);
    std::string v = to_string(c.variant);
    r.get("variant", v);
    c.variant = variant_from_string(v);
    r.get("ensemble_size", c.ensemble_size);
    r.get("temperature", c.temperature);
    r.get("init_drop_prob", c.init_drop_prob);
    r.get("length_scale", c.length_scale);
    r.get("bn_momentum", c.bn_momentum);
    c.validate();
    return c;
  }
};

}  // namespace bvib::model
