#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "bvib/config_io.hpp"
#include "bvib/error.hpp"
#include "bvib/random.hpp"
#include "bvib/shapegen/image.hpp"
#include "bvib/shapegen/mesh.hpp"
#include "bvib/shapegen/point_model.hpp"
#include "bvib/shapegen/superformula.hpp"
#include "bvib/shapegen/voxelize.hpp"

namespace bvib::shapegen {

struct ShapeSamplingConfig {
  int n_theta = 64;
  int n_phi = 32;
  int n_points = 64;
  Dims dims{32, 32, 32};
};

struct GeneratedShape {
  SupershapeParams params;
  SurfaceMesh mesh;    // voxel coordinates
  PointModel points;   // voxel coordinates, index i at correspondence_parameters(M)[i]
};

// Shape with the given parameters, normalized into the grid.
inline GeneratedShape make_shape(const SupershapeParams& params, const ShapeSamplingConfig& cfg) {
  if (cfg.n_theta < 8 || cfg.n_phi < 8) throw DomainError("generate_shape: grid resolution must be >= 8");
  GeneratedShape s;
  s.params = params;
  const SurfaceMesh raw = supershape_mesh(params, cfg.n_theta, cfg.n_phi);
  const auto norm = GridNormalization::fit(raw, cfg.dims);
  s.mesh = norm.apply(raw);
  for (const auto& [theta, phi] : correspondence_parameters(cfg.n_points))
    s.points.points.push_back(norm.apply(supershape_point(theta, phi, params)));
  return s;
}

inline GeneratedShape generate_shape(std::uint64_t seed, const ShapeSamplingConfig& cfg) {
  Rng rng = make_rng(seed, 0);
  return make_shape(sample_supershape_params(rng), cfg);
}

struct DatasetConfig {
  int n_train = 300;
  int n_val = 50;
  int n_test = 50;
  ShapeSamplingConfig shape;
  IntensityConfig intensity;
  double blur_min = 1.0;
  double blur_max = 8.0;
  std::uint64_t seed = 0;

  int total() const { return n_train + n_val + n_test; }

  void validate() const {
    if (n_train < 1 || n_val < 0 || n_test < 0) throw ConfigError("dataset: split counts must be non-negative, n_train >= 1");
    for (int d : shape.dims)
      if (d < 4) throw ConfigError("dataset: dims must be >= 4");
    if (shape.n_points < 4) throw ConfigError("dataset: n_points must be >= 4");
    if (shape.n_theta < 8 || shape.n_phi < 8) throw ConfigError("dataset: grid resolution must be >= 8");
    if (!(blur_min >= 0.0 && blur_max >= blur_min)) throw ConfigError("dataset: need 0 <= blur_min <= blur_max");
    if (intensity.sigma < 0) throw ConfigError("dataset: intensity sigma must be >= 0");
    if (intensity.foreground_mean == intensity.background_mean && !intensity.allow_zero_contrast)
      throw ConfigError("dataset: foreground and background means are equal");
  }

  // 1000/100/100 split with 128 correspondence points.
  static DatasetConfig full_scale() {
    DatasetConfig c;
    c.n_train = 1000;
    c.n_val = 100;
    c.n_test = 100;
    c.shape.n_points = 128;
    return c;
  }

  Json to_json() const {
    Json j;
    j["n_train"] = n_train;
    j["n_val"] = n_val;
    j["n_test"] = n_test;
    j["dims"] = {shape.dims[0], shape.dims[1], shape.dims[2]};
    j["n_points"] = shape.n_points;
    j["n_theta"] = shape.n_theta;
    j["n_phi"] = shape.n_phi;
    j["foreground_mean"] = intensity.foreground_mean;
    j["background_mean"] = intensity.background_mean;
    j["intensity_sigma"] = intensity.sigma;
    j["allow_zero_contrast"] = intensity.allow_zero_contrast;
    j["blur_min"] = blur_min;
    j["blur_max"] = blur_max;
    j["seed"] = seed;
    return j;
  }

  static DatasetConfig from_json(const Json& j) {
    ConfigReader r(j, "dataset");
    r.allow_only({"n_train", "n_val", "n_test", "dims", "n_points", "n_theta", "n_phi", "foreground_mean",
                  "background_mean", "intensity_sigma", "allow_zero_contrast", "blur_min", "blur_max", "seed"});
    DatasetConfig c;
    r.get("n_train", c.n_train);
    r.get("n_val", c.n_val);
    r.get("n_test", c.n_test);
    std::vector<int> dims{c.shape.dims[0], c.shape.dims[1], c.shape.dims[2]};
    r.get("dims", dims);
    if (dims.size() != 3) throw ConfigError("dataset.dims must have 3 entries");
    c.shape.dims = {dims[0], dims[1], dims[2]};
    r.get("n_points", c.shape.n_points);
    r.get("n_theta", c.shape.n_theta);
    r.get("n_phi", c.shape.n_phi);
    r.get("foreground_mean", c.intensity.foreground_mean);
    r.get("background_mean", c.intensity.background_mean);
    r.get("intensity_sigma", c.intensity.sigma);
    r.get("allow_zero_contrast", c.intensity.allow_zero_contrast);
    r.get("blur_min", c.blur_min);
    r.get("blur_max", c.blur_max);
    r.get("seed", c.seed);
    c.validate();
    return c;
  }

  std::string hash() const { return hex64(fnv1a64(to_json().dump())); }
};

enum class Split { Train, Val, Test, ShapeOutlier, ImageOutlier };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::ShapeOutlier: return "shape_outlier";
    case Split::ImageOutlier: return "image_outlier";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  if (s == "shape_outlier") return Split::ShapeOutlier;
  if (s == "image_outlier") return Split::ImageOutlier;
  throw ConfigError("unknown split label '" + s + "'");
}

struct SampleRecord {
  int id = 0;
  std::string name;
  std::vector<Split> splits;  // usually one label; outlier relabeling may add a second
  std::string volume;         // paths relative to the dataset root
  std::string points;
  std::string mesh;
  SupershapeParams params;
  double blur = 0.0;
  std::uint64_t intensity_seed = 0;

  bool in(Split s) const { return std::find(splits.begin(), splits.end(), s) != splits.end(); }
};

struct DatasetManifest {
  std::string root;  // not serialized
  DatasetConfig config;
  std::string config_hash;
  std::string template_mesh;
  std::vector<SampleRecord> samples;
  std::vector<std::string> notes;

  std::vector<const SampleRecord*> split(Split s) const {
    std::vector<const SampleRecord*> out;
    for (const auto& r : samples)
      if (r.in(s)) out.push_back(&r);
    return out;
  }

  std::string path(const std::string& rel) const { return (std::filesystem::path(root) / rel).string(); }

  Json to_json() const {
    Json j;
    j["format"] = "bvib-dataset";
    j["version"] = 1;
    j["config"] = config.to_json();
    j["config_hash"] = config_hash;
    j["template_mesh"] = template_mesh;
    j["notes"] = notes;
    Json arr = Json::array();
    for (const auto& s : samples) {
      Json e;
      e["id"] = s.id;
      e["name"] = s.name;
      Json labels = Json::array();
      for (auto sp : s.splits) labels.push_back(to_string(sp));
      e["splits"] = labels;
      e["volume"] = s.volume;
      e["points"] = s.points;
      e["mesh"] = s.mesh;
      e["params"] = {{"m", s.params.m}, {"n1", s.params.n1}, {"n2", s.params.n2},
                     {"n3", s.params.n3}, {"a", s.params.a},   {"b", s.params.b}};
      e["blur"] = s.blur;
      e["intensity_seed"] = s.intensity_seed;
      arr.push_back(e);
    }
    j["samples"] = arr;
    return j;
  }

  static DatasetManifest from_json(const Json& j, const std::string& root) {
    DatasetManifest m;
    m.root = root;
    if (j.value("format", "") != "bvib-dataset") throw ConfigError(root + ": not a dataset manifest");
    m.config = DatasetConfig::from_json(j.at("config"));
    m.config_hash = j.at("config_hash").get<std::string>();
    if (m.config_hash != m.config.hash()) throw ConfigError(root + ": manifest config hash does not match its config");
    m.template_mesh = j.at("template_mesh").get<std::string>();
    if (j.contains("notes")) m.notes = j.at("notes").get<std::vector<std::string>>();
    for (const auto& e : j.at("samples")) {
      SampleRecord s;
      s.id = e.at("id").get<int>();
      s.name = e.at("name").get<std::string>();
      for (const auto& l : e.at("splits")) s.splits.push_back(split_from_string(l.get<std::string>()));
      s.volume = e.at("volume").get<std::string>();
      s.points = e.at("points").get<std::string>();
      s.mesh = e.at("mesh").get<std::string>();
      const auto& p = e.at("params");
      s.params = {p.at("m").get<int>(), p.at("n1").get<double>(), p.at("n2").get<double>(),
                  p.at("n3").get<double>(), p.at("a").get<double>(), p.at("b").get<double>()};
      s.blur = e.at("blur").get<double>();
      s.intensity_seed = e.at("intensity_seed").get<std::uint64_t>();
      m.samples.push_back(std::move(s));
    }
    return m;
  }

  void save() const { write_json_file(path("manifest.json"), to_json()); }

  static DatasetManifest load(const std::string& root) {
    return from_json(read_json_file((std::filesystem::path(root) / "manifest.json").string()), root);
  }

  // Splits are disjoint (ignoring outlier relabels) and every file exists.
  void verify() const {
    std::set<int> ids;
    for (const auto& s : samples) {
      if (!ids.insert(s.id).second) throw ConfigError("manifest: duplicate sample id " + std::to_string(s.id));
      int primary = 0;
      for (auto sp : s.splits) primary += (sp == Split::Train || sp == Split::Val || sp == Split::Test) ? 1 : 0;
      if (primary > 1) throw ConfigError("manifest: sample " + s.name + " is in more than one split");
      for (const auto* f : {&s.volume, &s.points, &s.mesh})
        if (!std::filesystem::exists(path(*f))) throw IoError(path(*f), "referenced file is missing");
    }
  }
};

// Deterministic generation of one sample. The random stream depends only on
// (config seed, sample id).
struct GeneratedSample {
  GeneratedShape shape;
  Volume image;
  double blur = 0.0;
  std::uint64_t intensity_seed = 0;
};

inline GeneratedSample generate_sample(const DatasetConfig& cfg, int id) {
  GeneratedSample out;
  out.shape = generate_shape(derive_seed(cfg.seed, 2 * static_cast<std::uint64_t>(id)), cfg.shape);
  Rng rng = make_rng(cfg.seed, 2 * static_cast<std::uint64_t>(id) + 1);
  std::uniform_real_distribution<double> blur(cfg.blur_min, cfg.blur_max);
  out.blur = blur(rng);
  out.intensity_seed = rng();
  Rng intensity_rng = make_rng(out.intensity_seed);
  out.image = synthesize_image(voxelize(out.shape.mesh, cfg.shape.dims), cfg.intensity, out.blur, intensity_rng);
  return out;
}

inline std::vector<Split> assign_splits(const DatasetConfig& cfg) {
  std::vector<int> order(static_cast<std::size_t>(cfg.total()));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(cfg.seed, 0xffffffffull);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Split> split(order.size());
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const auto r = static_cast<int>(rank);
    split[static_cast<std::size_t>(order[rank])] =
        r < cfg.n_train ? Split::Train : (r < cfg.n_train + cfg.n_val ? Split::Val : Split::Test);
  }
  return split;
}

// Writes volumes/, points/, meshes/, template.off and manifest.json under root.
inline DatasetManifest build_dataset(const DatasetConfig& cfg, const std::string& root) {
  cfg.validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  for (const char* sub : {"volumes", "points", "meshes"}) {
    fs::create_directories(fs::path(root) / sub, ec);
    if (ec) throw IoError((fs::path(root) / sub).string(), ec.message());
  }
  DatasetManifest m;
  m.root = root;
  m.config = cfg;
  m.config_hash = cfg.hash();
  m.template_mesh = "template.off";
  SurfaceMesh tmpl{fibonacci_directions(cfg.shape.n_points), template_faces(cfg.shape.n_points)};
  write_off(m.path(m.template_mesh), tmpl);

  const auto splits = assign_splits(cfg);
  for (int id = 0; id < cfg.total(); ++id) {
    GeneratedSample g = generate_sample(cfg, id);
    SampleRecord r;
    r.id = id;
    char name[32];
    std::snprintf(name, sizeof name, "ss_%04d", id);
    r.name = name;
    r.splits = {splits[static_cast<std::size_t>(id)]};
    r.volume = "volumes/" + r.name + ".raw";
    r.points = "points/" + r.name + ".particles";
    r.mesh = "meshes/" + r.name + ".off";
    r.params = g.shape.params;
    r.blur = g.blur;
    r.intensity_seed = g.intensity_seed;
    write_volume(m.path(r.volume), g.image);
    write_particles(m.path(r.points), g.shape.points);
    write_off(m.path(r.mesh), g.shape.mesh);
    m.samples.push_back(std::move(r));
  }
  m.save();
  return m;
}

}  // namespace bvib::shapegen
