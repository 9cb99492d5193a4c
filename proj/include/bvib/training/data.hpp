#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "bvib/error.hpp"
#include "bvib/shapegen/dataset.hpp"
#include "bvib/shapegen/point_model.hpp"
#include "bvib/shapegen/volume.hpp"

namespace bvib::training {

struct Example {
  int id = 0;
  double blur = 0.0;
  shapegen::Volume image;
  Eigen::VectorXd target;  // flattened PDM, voxel coordinates
};

inline std::vector<Example> load_split(const shapegen::DatasetManifest& m, shapegen::Split split) {
  std::vector<Example> out;
  for (const auto* r : m.split(split)) {
    Example e;
    e.id = r->id;
    e.blur = r->blur;
    e.image = shapegen::read_volume(m.path(r->volume));
    e.target = shapegen::read_particles(m.path(r->points)).flat();
    out.push_back(std::move(e));
  }
  return out;
}

struct Normalization {
  double input_mean = 0.0;
  double input_std = 1.0;
  Eigen::VectorXd target_mean;
  double target_scale = 1.0;  // RMS deviation of targets from their mean
};

inline Normalization fit_normalization(const std::vector<Example>& train) {
  if (train.empty()) throw DomainError("fit_normalization: empty training set");
  Normalization n;
  double s = 0.0, sq = 0.0;
  std::size_t count = 0;
  for (const auto& e : train)
    for (float v : e.image.data) {
      s += v;
      sq += double(v) * v;
      ++count;
    }
  n.input_mean = s / static_cast<double>(count);
  n.input_std = std::sqrt(std::max(sq / static_cast<double>(count) - n.input_mean * n.input_mean, 0.0));
  if (!(n.input_std > 1e-12)) n.input_std = 1.0;

  n.target_mean = Eigen::VectorXd::Zero(train.front().target.size());
  for (const auto& e : train) n.target_mean += e.target;
  n.target_mean /= static_cast<double>(train.size());
  double dev = 0.0;
  for (const auto& e : train) dev += (e.target - n.target_mean).squaredNorm();
  n.target_scale = std::sqrt(dev / static_cast<double>(train.size() * static_cast<std::size_t>(n.target_mean.size())));
  if (!(n.target_scale > 1e-12)) n.target_scale = 1.0;
  return n;
}

}  // namespace bvib::training
