#pragma once

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bvib/config_io.hpp"
#include "bvib/error.hpp"
#include "bvib/harness/svg.hpp"
#include "bvib/shapegen/mesh.hpp"
#include "bvib/shapegen/point_model.hpp"

// Tables and plots are rebuilt from summary.json alone.
namespace bvib::harness {

inline const std::vector<std::string>& sample_columns() {
  static const std::vector<std::string> c{"blur",      "rmse",  "surface_mean",  "surface_max",  "epistemic",
                                          "aleatoric", "total", "shape_outlier", "image_outlier"};
  return c;
}

inline std::string fmt3(const Json& v) {
  if (!v.is_number()) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v.get<double>());
  return buf;
}

inline std::string csv_num(const Json& v) {
  if (!v.is_number()) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v.get<double>());
  return buf;
}

// Values of one per-sample column, optionally restricted to rows whose split matches.
inline std::vector<double> sample_values(const Json& run, const std::string& column, const std::string& split = "") {
  const Json& s = run.at("samples");
  if (!s.contains(column)) throw DomainError("report: missing column '" + column + "'");
  std::vector<double> out;
  const auto& col = s.at(column);
  const auto& splits = s.at("split");
  for (std::size_t i = 0; i < col.size(); ++i)
    if (split.empty() || splits.at(i).get<std::string>() == split) out.push_back(col.at(i).get<double>());
  return out;
}

inline std::vector<std::string> emit_tables(const Json& summary, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "tables");
  std::string metrics = "variant,quantity,mean,std,n\n";
  std::string corr = "variant,run,r_error_total,r_image_aleatoric,r_shape_epistemic\n";
  std::string runs = "variant,run,status,best_epoch,epochs_run,stop_reason\n";
  for (const auto& name : summary.at("variant_order")) {
    const std::string v = name.get<std::string>();
    const Json& entry = summary.at("variants").at(v);
    for (const auto& [q, a] : entry.at("aggregate").items())
      metrics += v + "," + q + "," + csv_num(a.at("mean")) + "," + csv_num(a.at("std")) + "," + std::to_string(a.at("n").get<int>()) + "\n";
    for (const auto& r : entry.at("runs")) {
      const Json& c = r.at("correlations");
      corr += v + "," + std::to_string(r.at("run").get<int>()) + "," + csv_num(c.at("error_vs_total")) + "," +
              csv_num(c.at("image_outlier_vs_aleatoric")) + "," + csv_num(c.at("shape_outlier_vs_epistemic")) + "\n";
      runs += v + "," + std::to_string(r.at("run").get<int>()) + ",ok," + std::to_string(r.at("best_epoch").get<int>()) + "," +
              std::to_string(r.at("epochs_run").get<int>()) + "," + r.at("stop_reason").get<std::string>() + "\n";
    }
  }
  for (const auto& f : summary.at("failed_runs"))
    runs += f.at("variant").get<std::string>() + "," + std::to_string(f.at("run").get<int>()) + ",failed,,,\n";
  const std::vector<std::string> files{(fs::path(dir) / "tables" / "metrics.csv").string(),
                                       (fs::path(dir) / "tables" / "correlations.csv").string(),
                                       (fs::path(dir) / "tables" / "runs.csv").string()};
  write_text_file(files[0], metrics);
  write_text_file(files[1], corr);
  write_text_file(files[2], runs);
  return files;
}

struct ScatterSpec {
  const char* file;
  const char* x;
  const char* y;
  const char* correlation;
  const char* xlabel;
  const char* ylabel;
};

inline const std::vector<ScatterSpec>& scatter_specs() {
  static const std::vector<ScatterSpec> s{
      {"error_vs_total", "rmse", "total", "error_vs_total", "RMSE", "total uncertainty"},
      {"shape_outlier_vs_epistemic", "shape_outlier", "epistemic", "shape_outlier_vs_epistemic", "shape outlier degree",
       "epistemic uncertainty"},
      {"image_outlier_vs_aleatoric", "image_outlier", "aleatoric", "image_outlier_vs_aleatoric", "image outlier degree",
       "aleatoric uncertainty"}};
  return s;
}

inline std::string file_safe(std::string s) {
  for (char& c : s)
    if (c == '-') c = '_';
  return s;
}

inline std::vector<std::string> emit_plots(const Json& summary, const std::string& dir) {
  namespace fs = std::filesystem;
  const Json& opts = summary.at("config").at("plots");
  std::vector<std::string> files;
  const fs::path plots = fs::path(dir) / "plots";
  fs::create_directories(plots);

  std::vector<std::string> order;
  for (const auto& v : summary.at("variant_order")) order.push_back(v.get<std::string>());
  if (order.empty()) throw DomainError("emit_plots: empty bundle");

  if (opts.at("box").get<bool>()) {
    const std::vector<std::pair<std::string, std::string>> box{
        {"rmse", "RMSE"}, {"surface_mean", "surface distance"}, {"total", "total uncertainty"},
        {"epistemic", "epistemic uncertainty"}, {"aleatoric", "aleatoric uncertainty"}};
    for (const auto& [col, label] : box) {
      std::vector<svg::BoxGroup> groups;
      for (const auto& v : order) {
        svg::BoxGroup g{v, {}};
        for (const auto& r : summary.at("variants").at(v).at("runs")) {
          const auto vals = sample_values(r, col, "test");
          g.values.insert(g.values.end(), vals.begin(), vals.end());
        }
        groups.push_back(std::move(g));
      }
      const auto path = (plots / ("box_" + col + ".svg")).string();
      write_text_file(path, svg::box_plot(label + " on the test split", label, groups));
      files.push_back(path);
    }
  }

  if (opts.at("scatter").get<bool>()) {
    for (const auto& v : order) {
      const Json& entry = summary.at("variants").at(v);
      for (const auto& spec : scatter_specs()) {
        std::vector<svg::ScatterSeries> series;
        for (const auto& r : entry.at("runs")) {
          svg::ScatterSeries s;
          s.label = "run " + std::to_string(r.at("run").get<int>()) + ": r = " + fmt3(r.at("correlations").at(spec.correlation));
          s.x = sample_values(r, spec.x);
          s.y = sample_values(r, spec.y);
          series.push_back(std::move(s));
        }
        const Json& agg = entry.at("aggregate");
        const std::string key = std::string("r_") + spec.correlation;
        const std::string title = v + ": mean r = " + (agg.contains(key) ? fmt3(agg.at(key).at("mean")) : "n/a");
        const auto path = (plots / ("scatter_" + file_safe(v) + "_" + spec.file + ".svg")).string();
        write_text_file(path, svg::scatter_plot(title, spec.xlabel, spec.ylabel, series));
        files.push_back(path);
      }
    }
  }

  if (opts.at("heatmaps").get<bool>()) {
    const int m = summary.at("config").at("dataset").at("n_points").get<int>();
    const auto faces = shapegen::template_faces(m);
    for (const auto& v : order) {
      const fs::path hdir = fs::path(dir) / "heatmaps" / file_safe(v);
      fs::create_directories(hdir);
      for (const auto& h : summary.at("variants").at(v).at("heatmaps")) {
        const auto pts = h.at("points").get<std::vector<double>>();
        const auto pm = shapegen::PointModel::from_flat(Eigen::Map<const Eigen::VectorXd>(pts.data(), static_cast<Eigen::Index>(pts.size())));
        if (static_cast<int>(pm.size()) != m) throw ShapeError("emit_plots: heatmap point count differs from n_points");
        const shapegen::SurfaceMesh mesh{pm.points, faces};
        const std::string stem = "sample_" + std::to_string(h.at("id").get<int>());
        const auto off = (hdir / (stem + ".off")).string();
        shapegen::write_off(off, mesh);
        std::string csv = "point,error,epistemic,aleatoric,total\n";
        const std::vector<std::string> fields{"error", "epistemic", "aleatoric", "total"};
        for (const auto& f : fields)
          if (h.at(f).size() != static_cast<std::size_t>(m)) throw ShapeError("emit_plots: heatmap scalar count differs from n_points");
        for (int i = 0; i < m; ++i) {
          csv += std::to_string(i);
          for (const auto& f : fields) csv += "," + csv_num(h.at(f).at(static_cast<std::size_t>(i)));
          csv += "\n";
        }
        const auto csv_path = (hdir / (stem + ".csv")).string();
        write_text_file(csv_path, csv);
        files.push_back(off);
        files.push_back(csv_path);
        for (const char* f : {"error", "total"}) {
          const auto path = (hdir / (stem + "_" + f + ".svg")).string();
          write_text_file(path, svg::mesh_heatmap(v + " sample " + std::to_string(h.at("id").get<int>()) + ": " + f, mesh,
                                                  h.at(f).get<std::vector<double>>()));
          files.push_back(path);
        }
      }
    }
  }
  return files;
}

}  // namespace bvib::harness
