#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bvib/config_io.hpp"
#include "bvib/error.hpp"
#include "bvib/model/network.hpp"

namespace bvib::inference {

struct SampleTag {
  int member = 0;              // ensemble member (network index for naive ensembles)
  std::uint64_t mask_seed = 0;  // seed of the dropout mask and latent draws
};

// T predictions (one per weight draw), columns of y_hat and sigma2 ([3M, T]).
struct SampleSet {
  Eigen::MatrixXd y_hat;
  Eigen::MatrixXd sigma2;
  std::vector<SampleTag> tags;

  Eigen::Index size() const { return y_hat.cols(); }

  void validate() const {
    if (y_hat.cols() < 1) throw DomainError("SampleSet: need at least one sample");
    if (y_hat.rows() != sigma2.rows() || y_hat.cols() != sigma2.cols())
      throw ShapeError("SampleSet: y_hat and sigma2 shapes differ");
    if (!tags.empty() && static_cast<Eigen::Index>(tags.size()) != y_hat.cols())
      throw ShapeError("SampleSet: one tag per sample");
    if (!y_hat.allFinite() || !sigma2.allFinite()) throw DomainError("SampleSet: non-finite entries");
    if (!(sigma2.array() > 0.0).all()) throw DomainError("SampleSet: sigma2 must be positive");
  }
};

struct UncertaintyReport {
  Eigen::VectorXd epistemic, aleatoric, total;                   // length 3M
  Eigen::VectorXd point_epistemic, point_aleatoric, point_total;  // length M, summed over x, y, z
  double global_epistemic = 0.0, global_aleatoric = 0.0, global_total = 0.0;  // mean over points

  Json to_json() const {
    auto arr = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    return Json{{"global", {{"epistemic", global_epistemic}, {"aleatoric", global_aleatoric}, {"total", global_total}}},
                {"per_point", {{"epistemic", arr(point_epistemic)}, {"aleatoric", arr(point_aleatoric)}, {"total", arr(point_total)}}},
                {"per_coordinate", {{"epistemic", arr(epistemic)}, {"aleatoric", arr(aleatoric)}, {"total", arr(total)}}}};
  }
};

inline constexpr double kEpistemicTolerance = 1e-12;

inline Eigen::VectorXd point_estimate(const SampleSet& s) {
  if (s.size() < 1) throw DomainError("point_estimate: empty sample set");
  return s.y_hat.rowwise().mean();
}

inline Eigen::VectorXd per_point_sum(const Eigen::VectorXd& v) {
  if (v.size() % 3 != 0) throw ShapeError("per_point_sum: length is not a multiple of 3");
  return v.reshaped(3, v.size() / 3).colwise().sum().transpose();
}

// Variance of y_hat over samples (two-pass) plus mean predicted variance.
inline UncertaintyReport decompose_uncertainty(const SampleSet& s) {
  s.validate();
  UncertaintyReport r;
  const Eigen::VectorXd mean = point_estimate(s);
  Eigen::VectorXd var = (s.y_hat.colwise() - mean).array().square().rowwise().mean();
  if (var.minCoeff() < -kEpistemicTolerance) throw DomainError("decompose_uncertainty: negative epistemic variance");
  r.epistemic = var.cwiseMax(0.0);
  r.aleatoric = s.sigma2.rowwise().mean();
  r.total = r.epistemic + r.aleatoric;
  r.point_epistemic = per_point_sum(r.epistemic);
  r.point_aleatoric = per_point_sum(r.aleatoric);
  r.point_total = per_point_sum(r.total);
  r.global_epistemic = r.point_epistemic.mean();
  r.global_aleatoric = r.point_aleatoric.mean();
  r.global_total = r.point_total.mean();
  return r;
}

// Flat table rows: sample id, point id, epistemic, aleatoric, total.
inline std::string uncertainty_csv_header() { return "sample_id,point_id,epistemic,aleatoric,total\n"; }

inline std::string uncertainty_csv_rows(int sample_id, const UncertaintyReport& r) {
  std::string out;
  char buf[160];
  for (Eigen::Index i = 0; i < r.point_total.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%d,%ld,%.9g,%.9g,%.9g\n", sample_id, static_cast<long>(i), r.point_epistemic(i),
                  r.point_aleatoric(i), r.point_total(i));
    out += buf;
  }
  return out;
}

}  // namespace bvib::inference
