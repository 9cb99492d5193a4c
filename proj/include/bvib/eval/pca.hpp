#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SVD>

#include "bvib/error.hpp"

namespace bvib::eval {

struct PcaModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd directions;    // [F, k], orthonormal columns
  Eigen::VectorXd eigenvalues;   // [k], nonincreasing
  double retained_fraction = 0.0;
  double residual_eigenvalue = 0.0;  // mean eigenvalue of the discarded subspace

  Eigen::Index features() const { return mean.size(); }
  Eigen::Index components() const { return eigenvalues.size(); }

  Eigen::VectorXd scores(const Eigen::VectorXd& v) const {
    if (v.size() != features()) throw ShapeError("PcaModel: feature count mismatch");
    return directions.transpose() * (v - mean);
  }
  Eigen::VectorXd reconstruct(const Eigen::VectorXd& v) const { return mean + directions * scores(v); }
};

// Rows of data are samples. Keeps the smallest number of leading components whose
// cumulative variance reaches variance_fraction of the total.
inline PcaModel fit_pca(const Eigen::MatrixXd& data, double variance_fraction = 0.95) {
  if (data.rows() < 2) throw DomainError("fit_pca: need at least 2 samples");
  if (!(variance_fraction > 0.0 && variance_fraction <= 1.0)) throw DomainError("fit_pca: fraction must lie in (0, 1]");
  PcaModel m;
  m.mean = data.colwise().mean().transpose();
  const Eigen::MatrixXd centered = data.rowwise() - m.mean.transpose();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd lambda = svd.singularValues().array().square() / static_cast<double>(data.rows() - 1);
  const double total = lambda.sum();
  if (!(total > 0.0) || lambda(0) <= total * 1e-14) throw DomainError("fit_pca: data has rank 0");

  const Eigen::Index n = lambda.size();
  double cum = 0.0;
  Eigen::Index k = 0;
  while (k < n) {
    cum += lambda(k++);
    if (cum >= variance_fraction * total * (1.0 - 1e-12)) break;
  }
  // Directions with numerically zero variance are never retained.
  while (k > 1 && lambda(k - 1) <= total * 1e-14) cum -= lambda(--k);
  m.directions = svd.matrixV().leftCols(k);
  m.eigenvalues = lambda.head(k);
  m.retained_fraction = cum / total;
  const Eigen::Index f = data.cols();
  m.residual_eigenvalue = k < f ? std::max(0.0, total - cum) / static_cast<double>(f - k) : 0.0;
  return m;
}

struct OutlierTerms {
  double within = 0.0;  // Mahalanobis distance of the scores
  double off = 0.0;     // reconstruction error in residual standard deviations
  double total() const { return within + off; }
};

inline OutlierTerms outlier_terms(const Eigen::VectorXd& v, const PcaModel& pca) {
  const Eigen::VectorXd s = pca.scores(v);
  OutlierTerms t;
  t.within = std::sqrt((s.array().square() / pca.eigenvalues.array()).sum());
  const Eigen::VectorXd centered = v - pca.mean;
  const double residual = (centered - pca.directions * s).norm();
  const double scale = std::max(1.0, centered.norm());
  if (pca.residual_eigenvalue > 0.0) {
    t.off = residual / std::sqrt(pca.residual_eigenvalue);
  } else if (residual > 1e-9 * scale) {
    throw DomainError("outlier_degree: off-subspace residual with zero residual eigenvalue");
  }
  return t;
}

inline double outlier_degree(const Eigen::VectorXd& v, const PcaModel& pca) { return outlier_terms(v, pca).total(); }

}  // namespace bvib::eval
