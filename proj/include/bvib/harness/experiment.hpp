#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bvib/config_io.hpp"
#include "bvib/error.hpp"
#include "bvib/eval/calibration.hpp"
#include "bvib/eval/pca.hpp"
#include "bvib/eval/surface.hpp"
#include "bvib/harness/config.hpp"
#include "bvib/harness/outliers.hpp"
#include "bvib/harness/report.hpp"
#include "bvib/inference/predict.hpp"
#include "bvib/inference/uncertainty.hpp"
#include "bvib/model/checkpoint.hpp"
#include "bvib/training/data.hpp"
#include "bvib/training/train.hpp"

namespace bvib::harness {

namespace fs = std::filesystem;
using Logger = std::function<void(const std::string&)>;

struct ReportBundle {
  std::string dir;
  Json summary;
  std::vector<std::string> files;
  bool complete = true;
};

// First unused <root>/vNNN, created empty.
inline std::string next_version_dir(const std::string& root) {
  fs::create_directories(root);
  for (int v = 1; v < 100000; ++v) {
    char name[16];
    std::snprintf(name, sizeof name, "v%03d", v);
    const fs::path p = fs::path(root) / name;
    if (fs::create_directory(p)) return p.string();
  }
  throw IoError(root, "no free version directory");
}

// Test and outlier samples with the data needed to score them.
struct EvalSample {
  training::Example example;
  std::string split;  // "test", "shape_outlier", "image_outlier" or "shape_outlier+image_outlier"
  Eigen::VectorXd image_features;
};

struct EvaluationContext {
  std::vector<EvalSample> samples;
  eval::PcaModel shape_pca, image_pca;
  std::vector<shapegen::Face> faces;
  inference::InferenceConfig inference;
  int surface_samples = 10000;
  std::uint64_t seed = 0;
  int heatmap_samples = 0;
};

struct RunEvaluation {
  Json run;
  std::string calibration_csv;
  std::string uncertainty_csv;
  Json heatmaps = Json::array();
};

// Separation statistics on the test rows: epistemic by shape outlier degree and
// aleatoric by blur.
inline Json separation_stats(const eval::CalibrationTable& t) {
  std::vector<const eval::CalibrationRow*> rows;
  for (const auto& r : t.rows)
    if (r.split == "test") rows.push_back(&r);
  Json out{{"epistemic_median_top10_shape", nullptr},
           {"epistemic_median_bottom50_shape", nullptr},
           {"aleatoric_mean_blur_high", nullptr},
           {"aleatoric_mean_blur_low", nullptr},
           {"n_top10", 0},
           {"n_bottom50", 0},
           {"n_blur_high", 0},
           {"n_blur_low", 0}};
  if (rows.empty()) return out;
  std::stable_sort(rows.begin(), rows.end(), [](auto* a, auto* b) { return a->shape_outlier > b->shape_outlier; });
  const std::size_t n = rows.size(), top = std::max<std::size_t>(1, n / 10), bottom = n / 2;
  std::vector<double> hi, lo;
  for (std::size_t i = 0; i < top; ++i) hi.push_back(rows[i]->epistemic);
  for (std::size_t i = n - bottom; i < n; ++i) lo.push_back(rows[i]->epistemic);
  out["epistemic_median_top10_shape"] = eval::median(hi);
  out["n_top10"] = hi.size();
  if (!lo.empty()) {
    out["epistemic_median_bottom50_shape"] = eval::median(lo);
    out["n_bottom50"] = lo.size();
  }
  std::vector<double> bh, bl;
  for (const auto* r : rows) {
    if (r->blur >= 6.0 && r->blur <= 8.0) bh.push_back(r->aleatoric);
    if (r->blur >= 1.0 && r->blur <= 3.0) bl.push_back(r->aleatoric);
  }
  if (!bh.empty()) out["aleatoric_mean_blur_high"] = eval::mean(bh);
  if (!bl.empty()) out["aleatoric_mean_blur_low"] = eval::mean(bl);
  out["n_blur_high"] = bh.size();
  out["n_blur_low"] = bl.size();
  return out;
}

inline RunEvaluation evaluate_run(const std::vector<const training::Net*>& nets, const EvaluationContext& ctx) {
  std::vector<eval::CalibrationInput> inputs;
  RunEvaluation out;
  out.uncertainty_csv = inference::uncertainty_csv_header();
  for (std::size_t i = 0; i < ctx.samples.size(); ++i) {
    const auto& s = ctx.samples[i];
    const auto& e = s.example;
    const auto set = inference::predict_samples<float>(nets, e.image, ctx.inference,
                                                       derive_seed(ctx.seed, static_cast<std::uint64_t>(e.id)));
    eval::CalibrationInput in;
    in.id = e.id;
    in.split = s.split;
    in.blur = e.blur;
    in.truth = e.target;
    in.prediction = inference::point_estimate(set);
    in.image = s.image_features;
    in.report = inference::decompose_uncertainty(set);
    const auto pred_mesh = eval::reconstruct_mesh(shapegen::PointModel::from_flat(in.prediction), ctx.faces);
    const auto true_mesh = eval::reconstruct_mesh(shapegen::PointModel::from_flat(in.truth), ctx.faces);
    in.surface = eval::surface_distance(pred_mesh, true_mesh, ctx.surface_samples, static_cast<std::uint64_t>(e.id));
    out.uncertainty_csv += inference::uncertainty_csv_rows(e.id, in.report);
    if (static_cast<int>(out.heatmaps.size()) < ctx.heatmap_samples && s.split == "test") {
      const Eigen::VectorXd d = in.prediction - in.truth;
      std::vector<double> err;
      for (Eigen::Index p = 0; p < d.size() / 3; ++p) err.push_back(d.segment<3>(3 * p).norm());
      auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
      out.heatmaps.push_back(Json{{"id", e.id},
                                  {"points", vec(in.prediction)},
                                  {"error", err},
                                  {"epistemic", vec(in.report.point_epistemic)},
                                  {"aleatoric", vec(in.report.point_aleatoric)},
                                  {"total", vec(in.report.point_total)}});
    }
    inputs.push_back(std::move(in));
  }
  const auto table = eval::build_calibration_table(inputs, ctx.shape_pca, ctx.image_pca);
  out.calibration_csv = table.to_csv();

  Json samples = Json::object();
  std::vector<int> ids;
  std::vector<std::string> splits;
  std::map<std::string, std::vector<double>> cols;
  for (const auto& r : table.rows) {
    ids.push_back(r.id);
    splits.push_back(r.split);
    cols["blur"].push_back(r.blur);
    cols["rmse"].push_back(r.error);
    cols["surface_mean"].push_back(r.surface_mean);
    cols["surface_max"].push_back(r.surface_max);
    cols["epistemic"].push_back(r.epistemic);
    cols["aleatoric"].push_back(r.aleatoric);
    cols["total"].push_back(r.total);
    cols["shape_outlier"].push_back(r.shape_outlier);
    cols["image_outlier"].push_back(r.image_outlier);
  }
  samples["id"] = ids;
  samples["split"] = splits;
  for (const auto& c : sample_columns()) samples[c] = cols[c];

  std::vector<double> test_rmse, test_surface, test_total, test_epi, test_ale;
  for (const auto& r : table.rows)
    if (r.split == "test") {
      test_rmse.push_back(r.error);
      test_surface.push_back(r.surface_mean);
      test_total.push_back(r.total);
      test_epi.push_back(r.epistemic);
      test_ale.push_back(r.aleatoric);
    }
  Json metrics = Json::object();
  if (!test_rmse.empty()) {
    metrics = Json{{"rmse_mean", eval::mean(test_rmse)},
                   {"rmse_median", eval::median(test_rmse)},
                   {"surface_mean", eval::mean(test_surface)},
                   {"total_mean", eval::mean(test_total)},
                   {"epistemic_mean", eval::mean(test_epi)},
                   {"aleatoric_mean", eval::mean(test_ale)}};
  }
  out.run = Json{{"metrics", metrics},
                 {"correlations", table.correlations_json()},
                 {"separation", separation_stats(table)},
                 {"samples", samples}};
  return out;
}

// Mean and sample standard deviation of each numeric quantity over runs; null entries are skipped.
inline Json aggregate_runs(const Json& runs) {
  std::map<std::string, std::vector<double>> values;
  std::vector<std::string> order;
  auto add = [&](const std::string& key, const Json& v) {
    if (!values.count(key)) order.push_back(key);
    auto& vec = values[key];
    if (v.is_number()) vec.push_back(v.get<double>());
  };
  for (const auto& r : runs) {
    for (const auto& [k, v] : r.at("metrics").items()) add(k, v);
    for (const auto& [k, v] : r.at("correlations").items()) add("r_" + k, v);
    for (const auto& [k, v] : r.at("separation").items())
      if (k.rfind("n_", 0) != 0) add(k, v);
  }
  Json out = Json::object();
  for (const auto& k : order) {
    const auto& v = values[k];
    Json a{{"n", v.size()}, {"mean", nullptr}, {"std", nullptr}};
    if (!v.empty()) {
      a["mean"] = eval::mean(v);
      a["std"] = v.size() > 1 ? eval::stddev(v) : 0.0;
    }
    out[k] = a;
  }
  return out;
}

namespace detail {

inline std::string split_label(const shapegen::SampleRecord& r) {
  std::string s;
  for (auto sp : {shapegen::Split::Test, shapegen::Split::ShapeOutlier, shapegen::Split::ImageOutlier})
    if (r.in(sp)) s += (s.empty() ? "" : "+") + shapegen::to_string(sp);
  return s;
}

inline void save_run(const std::string& dir, const training::TrainResult& r, const Json& meta) {
  fs::create_directories(dir);
  model::save_checkpoint<float>((fs::path(dir) / "model.ckpt").string(), r.best, r.best_epoch,
                                meta.at("seed").get<std::uint64_t>(), meta);
  write_text_file((fs::path(dir) / "loss.csv").string(), training::loss_csv(r.history));
}

inline std::uint64_t run_seed(std::uint64_t base, model::Variant v, int run) {
  return derive_seed(base, 1000u * static_cast<std::uint64_t>(v) + static_cast<std::uint64_t>(run));
}

}  // namespace detail

struct PreparedData {
  shapegen::DatasetManifest manifest;  // with outlier relabels applied
  std::vector<training::Example> train_set, val_set;
  EvaluationContext ctx;
  std::vector<double> constant_rmse;  // training-mean predictor, per test sample
  Json outliers = Json::object();
};

// Loads every sample, applies the outlier split and fits the PCA models on the
// training split. splits.json is written to out_dir when relabeling happens.
inline PreparedData prepare_data(const ExperimentConfig& cfg, shapegen::DatasetManifest manifest, const std::string& out_dir) {
  PreparedData out;
  std::map<int, training::Example> examples;
  std::map<int, Eigen::VectorXd> features;
  for (const auto& r : manifest.samples) {
    training::Example e;
    e.id = r.id;
    e.blur = r.blur;
    e.image = shapegen::read_volume(manifest.path(r.volume));
    e.target = shapegen::read_particles(manifest.path(r.points)).flat();
    features[r.id] = image_features(e.image, cfg.image_pca_extent);
    examples.emplace(r.id, std::move(e));
  }

  Json& outlier_json = out.outliers;
  if (cfg.outliers.shape_k + cfg.outliers.image_k > 0) {
    std::vector<Eigen::VectorXd> shapes, images;
    for (const auto& r : manifest.samples) {
      shapes.push_back(examples.at(r.id).target);
      images.push_back(features.at(r.id));
    }
    const auto ps = eval::fit_pca(stack_rows(shapes), cfg.pca_fraction);
    const auto pi = eval::fit_pca(stack_rows(images), cfg.pca_fraction);
    std::vector<double> sd, id;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      sd.push_back(eval::outlier_degree(shapes[i], ps));
      id.push_back(eval::outlier_degree(images[i], pi));
    }
    auto split = split_by_outlier(manifest, sd, id, cfg.outliers.shape_k, cfg.outliers.image_k, cfg.seed);
    manifest = std::move(split.manifest);
    if (!out_dir.empty()) write_json_file((fs::path(out_dir) / "splits.json").string(), manifest.to_json());
    outlier_json = Json{{"shape_outliers", split.shape_outliers}, {"image_outliers", split.image_outliers}, {"overlap", split.overlap}};
  }

  auto& train_set = out.train_set;
  auto& val_set = out.val_set;
  auto& ctx = out.ctx;
  for (const auto& r : manifest.samples) {
    if (r.in(shapegen::Split::Train)) train_set.push_back(examples.at(r.id));
    if (r.in(shapegen::Split::Val)) val_set.push_back(examples.at(r.id));
    const std::string label = detail::split_label(r);
    if (!label.empty()) ctx.samples.push_back({examples.at(r.id), label, features.at(r.id)});
  }
  if (train_set.empty() || val_set.empty() || ctx.samples.empty())
    throw ConfigError("experiment: train, validation and test splits must all be non-empty");

  std::vector<Eigen::VectorXd> train_shapes, train_images;
  for (const auto& e : train_set) {
    train_shapes.push_back(e.target);
    train_images.push_back(features.at(e.id));
  }
  ctx.shape_pca = eval::fit_pca(stack_rows(train_shapes), cfg.pca_fraction);
  ctx.image_pca = eval::fit_pca(stack_rows(train_images), cfg.pca_fraction);
  ctx.faces = shapegen::template_faces(cfg.dataset.shape.n_points);
  ctx.inference = cfg.inference;
  ctx.surface_samples = cfg.surface_samples;
  ctx.seed = derive_seed(cfg.seed, 0x1f3d);
  ctx.heatmap_samples = cfg.plots.heatmaps ? cfg.plots.heatmap_samples : 0;

  const auto norm = training::fit_normalization(train_set);
  auto& constant = out.constant_rmse;
  for (const auto& s : ctx.samples)
    if (s.split == "test") constant.push_back(eval::rmse(s.example.target, norm.target_mean));

  out.manifest = std::move(manifest);
  return out;
}

// Trains every variant x run, scores the test and outlier splits and writes the
// summary, tables and plots under a new versioned directory. A failed run is
// recorded in the summary and excluded from the aggregates.
inline ReportBundle run_experiment(const ExperimentConfig& cfg, const Json& metadata = Json::object(), const Logger& log = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  ReportBundle bundle;
  bundle.dir = next_version_dir(cfg.output_dir);
  const fs::path dir(bundle.dir);

  shapegen::DatasetManifest manifest;
  if (cfg.dataset_dir.empty()) {
    say("generating dataset");
    manifest = shapegen::build_dataset(cfg.dataset, (dir / "dataset").string());
  } else {
    manifest = shapegen::DatasetManifest::load(cfg.dataset_dir);
    if (manifest.config_hash != cfg.dataset.hash())
      throw ConfigError("dataset at " + cfg.dataset_dir + " was generated with a different dataset config");
  }
  manifest.verify();

  PreparedData data = prepare_data(cfg, std::move(manifest), bundle.dir);
  const auto& train_set = data.train_set;
  const auto& val_set = data.val_set;
  const auto& ctx = data.ctx;

  Json variants = Json::object(), order = Json::array(), failed = Json::array();
  for (const auto v : cfg.variants) {
    const std::string vname = model::to_string(v);
    const fs::path vdir = dir / "runs" / file_safe(vname);
    order.push_back(vname);
    Json entry{{"runs", Json::array()}, {"heatmaps", Json::array()}};
    training::TrainHooks hooks;
    auto train_one = [&](int k, const std::string& sub) {
      training::TrainConfig tc = cfg.train;
      tc.seed = detail::run_seed(cfg.seed, v, k);
      say(vname + " " + sub + ": training (seed " + std::to_string(tc.seed) + ")");
      auto r = training::train(cfg.model_for(v), train_set, val_set, tc, hooks);
      detail::save_run((vdir / sub).string(), r, Json{{"variant", vname}, {"run", k}, {"seed", tc.seed}});
      say(vname + " " + sub + ": best epoch " + std::to_string(r.best_epoch) + " of " + std::to_string(r.epochs_run));
      return std::make_pair(std::move(r), tc.seed);
    };
    auto record = [&](int k, const std::string& sub, const std::vector<const training::Net*>& nets, Json info) {
      say(vname + " " + sub + ": evaluating");
      auto ev = evaluate_run(nets, ctx);
      fs::create_directories(vdir / sub);
      write_text_file((vdir / sub / "calibration.csv").string(), ev.calibration_csv);
      write_text_file((vdir / sub / "uncertainty.csv").string(), ev.uncertainty_csv);
      info["run"] = k;
      for (auto& [key, val] : ev.run.items()) info[key] = val;
      entry["runs"].push_back(info);
      if (entry["heatmaps"].empty()) entry["heatmaps"] = ev.heatmaps;
    };

    if (model::is_naive_ensemble(v)) {
      std::vector<training::TrainResult> members;
      Json seeds = Json::array();
      bool ok = true;
      for (int k = 0; k < cfg.runs && ok; ++k) {
        try {
          auto [r, seed] = train_one(k, "member" + std::to_string(k));
          seeds.push_back(seed);
          members.push_back(std::move(r));
        } catch (const RuntimeFailure& e) {
          failed.push_back(Json{{"variant", vname}, {"run", k}, {"error", e.what()}});
          ok = false;
        }
      }
      if (ok) {
        std::vector<const training::Net*> nets;
        Json best = Json::array(), epochs = Json::array();
        int best_epoch = 0, epochs_run = 0;
        for (const auto& r : members) {
          nets.push_back(&r.best);
          best_epoch = std::max(best_epoch, r.best_epoch);
          epochs_run = std::max(epochs_run, r.epochs_run);
        }
        record(0, "ensemble", nets,
               Json{{"seed", seeds}, {"members", cfg.runs}, {"best_epoch", best_epoch}, {"epochs_run", epochs_run},
                    {"stop_reason", "ensemble"}});
      }
    } else {
      for (int k = 0; k < cfg.runs; ++k) {
        const std::string sub = "run" + std::to_string(k);
        try {
          auto [r, seed] = train_one(k, sub);
          record(k, sub, {&r.best},
                 Json{{"seed", seed}, {"best_epoch", r.best_epoch}, {"epochs_run", r.epochs_run}, {"stop_reason", r.stop_reason}});
        } catch (const RuntimeFailure& e) {
          failed.push_back(Json{{"variant", vname}, {"run", k}, {"error", e.what()}});
        }
      }
    }
    entry["aggregate"] = aggregate_runs(entry["runs"]);
    variants[vname] = entry;
  }

  bundle.complete = failed.empty();
  bundle.summary = Json{{"format", "bvib-summary"},
                        {"version", 1},
                        {"config", cfg.to_json(false)},
                        {"dataset", {{"config_hash", data.manifest.config_hash},
                                     {"n_train", train_set.size()},
                                     {"n_val", val_set.size()},
                                     {"n_evaluated", ctx.samples.size()},
                                     {"shape_pca_components", ctx.shape_pca.components()},
                                     {"image_pca_components", ctx.image_pca.components()},
                                     {"outliers", data.outliers}}},
                        {"constant_predictor_rmse", data.constant_rmse.empty() ? Json(nullptr) : Json(eval::mean(data.constant_rmse))},
                        {"variant_order", order},
                        {"variants", variants},
                        {"failed_runs", failed},
                        {"complete", bundle.complete}};
  write_json_file((dir / "summary.json").string(), bundle.summary);
  bundle.files.push_back((dir / "summary.json").string());
  for (auto& f : emit_tables(bundle.summary, bundle.dir)) bundle.files.push_back(f);
  for (auto& f : emit_plots(bundle.summary, bundle.dir)) bundle.files.push_back(f);

  Json meta = metadata;
  meta["config"] = cfg.to_json(true);
  meta["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  meta["complete"] = bundle.complete;
  write_json_file((dir / "run_metadata.json").string(), meta);
  say(std::string("done: ") + bundle.dir + (bundle.complete ? "" : " (incomplete)"));
  return bundle;
}

}  // namespace bvib::harness
