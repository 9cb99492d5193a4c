#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bvib/config_io.hpp"
#include "bvib/error.hpp"
#include "bvib/eval/metrics.hpp"
#include "bvib/eval/pca.hpp"
#include "bvib/eval/surface.hpp"
#include "bvib/inference/uncertainty.hpp"

namespace bvib::eval {

struct CalibrationRow {
  int id = 0;
  std::string split;
  double blur = 0.0;
  double error = 0.0;  // RMSE of the point estimate
  double surface_mean = 0.0;
  double surface_max = 0.0;
  double epistemic = 0.0;
  double aleatoric = 0.0;
  double total = 0.0;
  double shape_outlier = 0.0;
  double image_outlier = 0.0;
};

// Inputs for one test sample, aligned by id.
struct CalibrationInput {
  int id = 0;
  std::string split;
  double blur = 0.0;
  Eigen::VectorXd truth;       // flattened ground-truth PDM
  Eigen::VectorXd prediction;  // point estimate
  Eigen::VectorXd image;       // flattened (downsampled) image features
  inference::UncertaintyReport report;
  std::optional<SurfaceDistance> surface;
};

struct CalibrationTable {
  std::vector<CalibrationRow> rows;
  std::optional<double> r_error_total;
  std::optional<double> r_image_aleatoric;
  std::optional<double> r_shape_epistemic;

  void compute_correlations() {
    auto col = [&](double CalibrationRow::*f) {
      std::vector<double> v;
      for (const auto& r : rows) v.push_back(r.*f);
      return v;
    };
    auto r = [&](double CalibrationRow::*a, double CalibrationRow::*b) -> std::optional<double> {
      try {
        return pearson_r(col(a), col(b));
      } catch (const DomainError&) {
        return std::nullopt;  // zero variance, e.g. a single deterministic model
      }
    };
    r_error_total = r(&CalibrationRow::error, &CalibrationRow::total);
    r_image_aleatoric = r(&CalibrationRow::image_outlier, &CalibrationRow::aleatoric);
    r_shape_epistemic = r(&CalibrationRow::shape_outlier, &CalibrationRow::epistemic);
  }

  std::string to_csv() const {
    std::string out = "sample_id,split,blur,rmse,surface_mean,surface_max,epistemic,aleatoric,total,shape_outlier,image_outlier\n";
    char buf[512];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%d,%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.id, r.split.c_str(), r.blur,
                    r.error, r.surface_mean, r.surface_max, r.epistemic, r.aleatoric, r.total, r.shape_outlier,
                    r.image_outlier);
      out += buf;
    }
    return out;
  }

  Json correlations_json() const {
    auto j = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
    return Json{{"error_vs_total", j(r_error_total)},
                {"image_outlier_vs_aleatoric", j(r_image_aleatoric)},
                {"shape_outlier_vs_epistemic", j(r_shape_epistemic)}};
  }
};

inline CalibrationTable build_calibration_table(const std::vector<CalibrationInput>& inputs, const PcaModel& pca_shape,
                                                const PcaModel& pca_image) {
  CalibrationTable t;
  std::set<int> seen;
  for (const auto& in : inputs) {
    if (!seen.insert(in.id).second) throw DomainError("build_calibration_table: duplicate sample id " + std::to_string(in.id));
    CalibrationRow r;
    r.id = in.id;
    r.split = in.split;
    r.blur = in.blur;
    r.error = rmse(in.truth, in.prediction);
    if (in.surface) {
      r.surface_mean = in.surface->mean;
      r.surface_max = in.surface->max;
    }
    r.epistemic = in.report.global_epistemic;
    r.aleatoric = in.report.global_aleatoric;
    r.total = in.report.global_total;
    r.shape_outlier = outlier_degree(in.truth, pca_shape);
    r.image_outlier = outlier_degree(in.image, pca_image);
    for (double v : {r.error, r.surface_mean, r.surface_max, r.epistemic, r.aleatoric, r.total, r.shape_outlier, r.image_outlier})
      if (!std::isfinite(v)) throw DomainError("build_calibration_table: non-finite value for sample " + std::to_string(r.id));
    t.rows.push_back(std::move(r));
  }
  t.compute_correlations();
  return t;
}

// Aligns predictions and reports keyed by sample id with the inputs' ids.
inline void check_alignment(const std::vector<int>& expected, const std::vector<int>& got, const char* what) {
  if (expected != got) throw DomainError(std::string("calibration: ") + what + " ids do not match the test samples");
}

}  // namespace bvib::eval
