#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bvib/config_io.hpp"
#include "bvib/error.hpp"
#include "bvib/harness/config.hpp"
#include "bvib/harness/experiment.hpp"
#include "bvib/harness/report.hpp"
#include "bvib/model/checkpoint.hpp"
#include "bvib/shapegen/dataset.hpp"
#include "bvib/training/data.hpp"
#include "bvib/training/train.hpp"

#ifndef BVIB_GIT_HASH
#define BVIB_GIT_HASH "unknown"
#endif

namespace fs = std::filesystem;
using namespace bvib;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Clock {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); }
};

void log_line(const std::string& s) { std::fprintf(stderr, "[bvib] %s\n", s.c_str()); }

harness::ExperimentConfig load_config(const std::string& path) {
  if (path.empty()) return {};
  try {
    return harness::ExperimentConfig::from_json(read_json_file(path));
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
}

void write_metadata(const std::string& dir, const std::string& command, const harness::ExperimentConfig& cfg,
                    const Clock& clock, Json extra = Json::object()) {
  fs::create_directories(dir);
  extra["command"] = command;
  extra["config"] = cfg.to_json(true);
  extra["git_hash"] = BVIB_GIT_HASH;
  extra["wall_seconds"] = clock.seconds();
  write_json_file((fs::path(dir) / "run_metadata.json").string(), extra);
}

std::vector<training::Net> load_networks(const std::vector<std::string>& paths) {
  std::vector<training::Net> nets;
  for (const auto& p : paths) nets.push_back(model::load_checkpoint<float>(p).net);
  return nets;
}

std::vector<const training::Net*> pointers(const std::vector<training::Net>& nets) {
  std::vector<const training::Net*> out;
  for (const auto& n : nets) out.push_back(&n);
  return out;
}

int cmd_generate(const std::string& config, const std::string& out) {
  const Clock clock;
  const auto cfg = load_config(config);
  if (fs::exists(fs::path(out) / "manifest.json")) throw ConfigError(out + " already contains a dataset");
  const auto m = shapegen::build_dataset(cfg.dataset, out);
  log_line("wrote " + std::to_string(m.samples.size()) + " samples to " + out);
  write_metadata(out, "generate", cfg, clock);
  return 0;
}

int cmd_train(const std::string& config, const std::string& data, const std::string& variant, int run, const std::string& out) {
  const Clock clock;
  auto cfg = load_config(config);
  const auto v = model::variant_from_string(variant);
  const auto manifest = shapegen::DatasetManifest::load(data);
  manifest.verify();
  cfg.dataset = manifest.config;
  const auto train_set = training::load_split(manifest, shapegen::Split::Train);
  const auto val_set = training::load_split(manifest, shapegen::Split::Val);
  const int members = model::is_naive_ensemble(v) ? cfg.runs : 1;
  Json seeds = Json::array();
  for (int k = 0; k < members; ++k) {
    const int idx = model::is_naive_ensemble(v) ? k : run;
    training::TrainConfig tc = cfg.train;
    tc.seed = harness::detail::run_seed(cfg.seed, v, idx);
    training::TrainHooks hooks;
    hooks.on_epoch = [&](const training::EpochRecord& r) {
      if (r.epoch % 10 == 0) log_line("epoch " + std::to_string(r.epoch) + " val rmse " + std::to_string(r.val_rmse));
    };
    const auto r = training::train(cfg.model_for(v), train_set, val_set, tc, hooks);
    const std::string dir = model::is_naive_ensemble(v) ? (fs::path(out) / ("member" + std::to_string(k))).string() : out;
    harness::detail::save_run(dir, r, Json{{"variant", variant}, {"run", idx}, {"seed", tc.seed}});
    log_line("saved " + dir + "/model.ckpt (best epoch " + std::to_string(r.best_epoch) + ")");
    seeds.push_back(tc.seed);
  }
  write_metadata(out, "train", cfg, clock, Json{{"variant", variant}, {"seeds", seeds}});
  return 0;
}

int cmd_predict(const std::vector<std::string>& checkpoints, const std::string& data, const std::string& split,
                const std::string& out, std::uint64_t seed, const std::string& config) {
  const Clock clock;
  const auto cfg = load_config(config);
  const auto manifest = shapegen::DatasetManifest::load(data);
  const auto nets = load_networks(checkpoints);
  const auto ptrs = pointers(nets);
  const auto samples = training::load_split(manifest, shapegen::split_from_string(split));
  std::string csv = inference::uncertainty_csv_header();
  Json preds = Json::array();
  for (const auto& e : samples) {
    const auto set = inference::predict_samples<float>(ptrs, e.image, cfg.inference, derive_seed(seed, static_cast<std::uint64_t>(e.id)));
    const auto rep = inference::decompose_uncertainty(set);
    const Eigen::VectorXd y = inference::point_estimate(set);
    csv += inference::uncertainty_csv_rows(e.id, rep);
    Json p = rep.to_json();
    p["id"] = e.id;
    p["prediction"] = std::vector<double>(y.data(), y.data() + y.size());
    p["rmse"] = eval::rmse(e.target, y);
    preds.push_back(p);
  }
  fs::create_directories(out);
  write_text_file((fs::path(out) / "uncertainty.csv").string(), csv);
  write_json_file((fs::path(out) / "predictions.json").string(), preds);
  write_metadata(out, "predict", cfg, clock, Json{{"checkpoints", checkpoints}, {"split", split}, {"seed", seed}});
  log_line("predicted " + std::to_string(samples.size()) + " samples");
  return 0;
}

int cmd_evaluate(const std::vector<std::string>& checkpoints, const std::string& data, const std::string& out,
                 const std::string& config) {
  const Clock clock;
  auto cfg = load_config(config);
  auto manifest = shapegen::DatasetManifest::load(data);
  cfg.dataset = manifest.config;
  const auto nets = load_networks(checkpoints);
  fs::create_directories(out);
  const auto prepared = harness::prepare_data(cfg, std::move(manifest), out);
  const auto ev = harness::evaluate_run(pointers(nets), prepared.ctx);
  write_text_file((fs::path(out) / "calibration.csv").string(), ev.calibration_csv);
  write_text_file((fs::path(out) / "uncertainty.csv").string(), ev.uncertainty_csv);
  Json result = ev.run;
  result.erase("samples");
  write_json_file((fs::path(out) / "evaluation.json").string(), result);
  write_metadata(out, "evaluate", cfg, clock, Json{{"checkpoints", checkpoints}});
  std::cout << result.dump(2) << "\n";
  return 0;
}

int cmd_report(const std::string& experiment) {
  const Json summary = read_json_file((fs::path(experiment) / "summary.json").string());
  auto files = harness::emit_tables(summary, experiment);
  for (auto& f : harness::emit_plots(summary, experiment)) files.push_back(f);
  log_line("wrote " + std::to_string(files.size()) + " files");
  return 0;
}

int cmd_run_all(const std::string& config, const std::string& out, const std::string& data, bool quiet) {
  auto cfg = load_config(config);
  if (!out.empty()) cfg.output_dir = out;
  if (!data.empty()) cfg.dataset_dir = data;
  const auto bundle = harness::run_experiment(cfg, Json{{"command", "run-all"}, {"git_hash", BVIB_GIT_HASH}},
                                              quiet ? harness::Logger{} : harness::Logger(log_line));
  std::cout << bundle.dir << "\n";
  return bundle.complete ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian variational information bottleneck shape models from synthetic volumes"};
  app.require_subcommand(1);

  std::string config, out, data, variant, split = "test", experiment;
  std::vector<std::string> checkpoints;
  int run = 0;
  std::uint64_t seed = 0;
  bool quiet = false;

  auto* gen = app.add_subcommand("generate", "Generate a supershape dataset");
  gen->add_option("-c,--config", config, "Experiment config (dataset section is used)");
  gen->add_option("-o,--out", out, "Dataset directory")->required();

  auto* tr = app.add_subcommand("train", "Train one run of a variant (naive ensembles train all members)");
  tr->add_option("-c,--config", config, "Experiment config");
  tr->add_option("-d,--data", data, "Dataset directory")->required();
  tr->add_option("-v,--variant", variant, "VIB, CD, BE, NE, NE-CD or BE-CD")->required();
  tr->add_option("-r,--run", run, "Run index (selects the seed)");
  tr->add_option("-o,--out", out, "Output directory")->required();

  auto* pr = app.add_subcommand("predict", "Predict with uncertainty for one split");
  pr->add_option("-k,--checkpoint", checkpoints, "Checkpoint file; repeat for naive-ensemble members")->required();
  pr->add_option("-d,--data", data, "Dataset directory")->required();
  pr->add_option("-s,--split", split, "train, val, test, shape_outlier or image_outlier");
  pr->add_option("-o,--out", out, "Output directory")->required();
  pr->add_option("--seed", seed, "Sampling seed");
  pr->add_option("-c,--config", config, "Experiment config (inference section is used)");

  auto* ev = app.add_subcommand("evaluate", "Score checkpoints on the test and outlier splits");
  ev->add_option("-k,--checkpoint", checkpoints, "Checkpoint file; repeat for naive-ensemble members")->required();
  ev->add_option("-d,--data", data, "Dataset directory")->required();
  ev->add_option("-o,--out", out, "Output directory")->required();
  ev->add_option("-c,--config", config, "Experiment config");

  auto* rep = app.add_subcommand("report", "Rebuild tables and plots from an experiment's summary.json");
  rep->add_option("experiment", experiment, "Experiment directory (e.g. experiments/v001)")->required();

  auto* all = app.add_subcommand("run-all", "Generate, train, predict, evaluate and report");
  all->add_option("-c,--config", config, "Experiment config")->required();
  all->add_option("-o,--out", out, "Overrides output_dir");
  all->add_option("-d,--data", data, "Use an existing dataset directory");
  all->add_flag("-q,--quiet", quiet, "No progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) return cmd_generate(config, out);
    if (*tr) return cmd_train(config, data, variant, run, out);
    if (*pr) return cmd_predict(checkpoints, data, split, out, seed, config);
    if (*ev) return cmd_evaluate(checkpoints, data, out, config);
    if (*rep) return cmd_report(experiment);
    if (*all) return cmd_run_all(config, out, data, quiet);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return 0;
}
