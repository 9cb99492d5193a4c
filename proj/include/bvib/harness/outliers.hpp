#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bvib/error.hpp"
#include "bvib/eval/pca.hpp"
#include "bvib/random.hpp"
#include "bvib/shapegen/dataset.hpp"

namespace bvib::harness {

// Flattened block-averaged volume, used for image PCA.
inline Eigen::VectorXd image_features(const shapegen::Volume& v, int max_extent) {
  const shapegen::Volume d = shapegen::downsample_to(v, max_extent);
  Eigen::VectorXd out(static_cast<Eigen::Index>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i) out(static_cast<Eigen::Index>(i)) = d.data[i];
  return out;
}

inline Eigen::MatrixXd stack_rows(const std::vector<Eigen::VectorXd>& rows) {
  if (rows.empty()) throw DomainError("stack_rows: no rows");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != m.cols()) throw ShapeError("stack_rows: rows differ in length");
    m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  }
  return m;
}

struct OutlierSplitResult {
  shapegen::DatasetManifest manifest;
  std::vector<int> shape_outliers;  // ids, descending degree
  std::vector<int> image_outliers;
  std::vector<int> overlap;
};

// shape_degree and image_degree are indexed like manifest.samples. The top-k
// samples by each degree are labelled as outlier splits; the remaining pool is
// re-split at random keeping the train and validation sizes.
inline OutlierSplitResult split_by_outlier(const shapegen::DatasetManifest& manifest, const std::vector<double>& shape_degree,
                                           const std::vector<double>& image_degree, int shape_k, int image_k,
                                           std::uint64_t seed) {
  const std::size_t n = manifest.samples.size();
  if (shape_degree.size() != n || image_degree.size() != n) throw ShapeError("split_by_outlier: one degree per sample required");
  const int n_test = static_cast<int>(manifest.split(shapegen::Split::Test).size());
  if (shape_k < 0 || image_k < 0 || shape_k + image_k > n_test)
    throw DomainError("split_by_outlier: k values must be >= 0 and fit in the test split");

  auto top = [&](const std::vector<double>& deg, int k) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return deg[a] > deg[b]; });
    idx.resize(static_cast<std::size_t>(k));
    return idx;
  };
  OutlierSplitResult out;
  out.manifest = manifest;
  auto& samples = out.manifest.samples;
  const auto shape_top = top(shape_degree, shape_k), image_top = top(image_degree, image_k);
  std::vector<char> held(n, 0);
  for (auto i : shape_top) {
    held[i] = 1;
    out.shape_outliers.push_back(samples[i].id);
  }
  for (auto i : image_top) {
    if (held[i]) out.overlap.push_back(samples[i].id);
    held[i] = 1;
    out.image_outliers.push_back(samples[i].id);
  }

  int n_train = 0, n_val = 0;
  for (const auto& s : samples) {
    n_train += s.in(shapegen::Split::Train) ? 1 : 0;
    n_val += s.in(shapegen::Split::Val) ? 1 : 0;
  }
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < n && shape_k + image_k > 0; ++i)
    if (!held[i]) pool.push_back(i);
  Rng rng = make_rng(seed, 0x0571);
  std::shuffle(pool.begin(), pool.end(), rng);
  for (std::size_t r = 0; r < pool.size(); ++r) {
    const int rank = static_cast<int>(r);
    samples[pool[r]].splits = {rank < n_train ? shapegen::Split::Train
                                              : (rank < n_train + n_val ? shapegen::Split::Val : shapegen::Split::Test)};
  }
  for (std::size_t i = 0; i < n; ++i)
    if (held[i]) samples[i].splits.clear();
  for (auto i : shape_top) samples[i].splits.push_back(shapegen::Split::ShapeOutlier);
  for (auto i : image_top) samples[i].splits.push_back(shapegen::Split::ImageOutlier);

  auto ids = [](const std::vector<int>& v) {
    std::string s;
    for (int id : v) s += (s.empty() ? "" : " ") + std::to_string(id);
    return s.empty() ? std::string("none") : s;
  };
  out.manifest.notes.push_back("outlier split: shape_k=" + std::to_string(shape_k) + " image_k=" + std::to_string(image_k) +
                               " seed=" + std::to_string(seed));
  if (shape_k > 0) out.manifest.notes.push_back("shape outliers: " + ids(out.shape_outliers));
  if (image_k > 0) out.manifest.notes.push_back("image outliers: " + ids(out.image_outliers));
  if (!out.overlap.empty()) out.manifest.notes.push_back("warning: samples in both outlier sets: " + ids(out.overlap));
  return out;
}

}  // namespace bvib::harness
