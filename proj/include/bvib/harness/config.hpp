#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bvib/config_io.hpp"
#include "bvib/error.hpp"
#include "bvib/inference/predict.hpp"
#include "bvib/model/config.hpp"
#include "bvib/shapegen/dataset.hpp"
#include "bvib/training/train.hpp"

namespace bvib::harness {

struct PlotOptions {
  bool box = true;
  bool scatter = true;
  bool heatmaps = true;
  int heatmap_samples = 3;

  Json to_json() const {
    return Json{{"box", box}, {"scatter", scatter}, {"heatmaps", heatmaps}, {"heatmap_samples", heatmap_samples}};
  }
  static PlotOptions from_json(const Json& j) {
    ConfigReader r(j, "plots");
    r.allow_only({"box", "scatter", "heatmaps", "heatmap_samples"});
    PlotOptions p;
    r.get("box", p.box);
    r.get("scatter", p.scatter);
    r.get("heatmaps", p.heatmaps);
    r.get("heatmap_samples", p.heatmap_samples);
    if (p.heatmap_samples < 0) throw ConfigError("plots.heatmap_samples must be >= 0");
    return p;
  }
};

// Held-out outlier splits: the top-k samples of the pool by each outlier degree.
struct OutlierSplitConfig {
  int shape_k = 0;
  int image_k = 0;

  Json to_json() const { return Json{{"shape_k", shape_k}, {"image_k", image_k}}; }
  static OutlierSplitConfig from_json(const Json& j) {
    ConfigReader r(j, "outliers");
    r.allow_only({"shape_k", "image_k"});
    OutlierSplitConfig o;
    r.get("shape_k", o.shape_k);
    r.get("image_k", o.image_k);
    if (o.shape_k < 0 || o.image_k < 0) throw ConfigError("outliers: k must be >= 0");
    return o;
  }
};

struct ExperimentConfig {
  shapegen::DatasetConfig dataset;
  std::string dataset_dir;  // existing dataset; empty generates one inside the experiment directory
  model::ModelConfig model;  // input_dims and n_points follow the dataset
  training::TrainConfig train;
  inference::InferenceConfig inference;
  std::vector<model::Variant> variants{model::Variant::VIB, model::Variant::CD, model::Variant::BE, model::Variant::BE_CD};
  int runs = 2;  // naive ensembles use the runs as members
  std::string output_dir = "experiments";
  std::uint64_t seed = 0;
  double pca_fraction = 0.95;
  int image_pca_extent = 16;
  int surface_samples = 10000;
  OutlierSplitConfig outliers;
  PlotOptions plots;

  void validate() const {
    dataset.validate();
    train.validate();
    inference.validate();
    if (variants.empty()) throw ConfigError("experiment: need at least one variant");
    for (std::size_t i = 0; i < variants.size(); ++i)
      for (std::size_t k = 0; k < i; ++k)
        if (variants[i] == variants[k]) throw ConfigError("experiment: variant " + model::to_string(variants[i]) + " listed twice");
    if (runs < 1) throw ConfigError("experiment: runs must be >= 1");
    for (auto v : variants)
      if (model::is_naive_ensemble(v) && runs < 2)
        throw ConfigError("experiment: " + model::to_string(v) + " needs runs >= 2 (the runs are its members)");
    if (!(pca_fraction > 0.0 && pca_fraction <= 1.0)) throw ConfigError("experiment: pca_fraction must lie in (0, 1]");
    if (image_pca_extent < 1) throw ConfigError("experiment: image_pca_extent must be >= 1");
    if (surface_samples < 1) throw ConfigError("experiment: surface_samples must be >= 1");
    if (outliers.shape_k + outliers.image_k > dataset.n_test)
      throw ConfigError("experiment: outlier k values must not exceed the test split size");
    model_for(variants.front()).validate();
  }

  // Model configuration for one variant, with input size and point count taken from the dataset.
  model::ModelConfig model_for(model::Variant v) const {
    model::ModelConfig m = model;
    m.input_dims = dataset.shape.dims;
    m.n_points = dataset.shape.n_points;
    m.variant = v;
    return m;
  }

  // No output or dataset paths, so the summary does not depend on where it is written.
  Json to_json(bool with_paths = true) const {
    Json vs = Json::array();
    for (auto v : variants) vs.push_back(model::to_string(v));
    Json m = model.to_json();
    m.erase("input_dims");
    m.erase("n_points");
    m.erase("variant");
    Json j{{"dataset", dataset.to_json()},
           {"model", m},
           {"train", train.to_json()},
           {"inference", inference.to_json()},
           {"variants", vs},
           {"runs", runs},
           {"seed", seed},
           {"pca_fraction", pca_fraction},
           {"image_pca_extent", image_pca_extent},
           {"surface_samples", surface_samples},
           {"outliers", outliers.to_json()},
           {"plots", plots.to_json()}};
    if (with_paths) {
      j["output_dir"] = output_dir;
      j["dataset_dir"] = dataset_dir;
    }
    return j;
  }

  static ExperimentConfig from_json(const Json& j) {
    ConfigReader r(j, "experiment");
    r.allow_only({"dataset", "dataset_dir", "model", "train", "inference", "variants", "runs", "output_dir", "seed",
                  "pca_fraction", "image_pca_extent", "surface_samples", "outliers", "plots"});
    ExperimentConfig c;
    if (r.has("dataset")) c.dataset = shapegen::DatasetConfig::from_json(r.raw().at("dataset"));
    r.get("dataset_dir", c.dataset_dir);
    if (r.has("model")) {
      const Json& mj = r.raw().at("model");
      if (mj.is_object() && (mj.contains("input_dims") || mj.contains("n_points") || mj.contains("variant")))
        throw ConfigError("experiment.model: input_dims and n_points come from the dataset and variant from 'variants'");
      c.model = model::ModelConfig::from_json(mj);
    }
    if (r.has("train")) c.train = training::TrainConfig::from_json(r.raw().at("train"));
    if (r.has("inference")) c.inference = inference::InferenceConfig::from_json(r.raw().at("inference"));
    if (r.has("variants")) {
      std::vector<std::string> names;
      r.get("variants", names);
      c.variants.clear();
      for (const auto& n : names) c.variants.push_back(model::variant_from_string(n));
    }
    r.get("runs", c.runs);
    r.get("output_dir", c.output_dir);
    r.get("seed", c.seed);
    r.get("pca_fraction", c.pca_fraction);
    r.get("image_pca_extent", c.image_pca_extent);
    r.get("surface_samples", c.surface_samples);
    if (r.has("outliers")) c.outliers = OutlierSplitConfig::from_json(r.raw().at("outliers"));
    if (r.has("plots")) c.plots = PlotOptions::from_json(r.raw().at("plots"));
    c.validate();
    return c;
  }
};

}  // namespace bvib::harness
