#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bvib/error.hpp"
#include "bvib/shapegen/superformula.hpp"

namespace bvib::shapegen {

// M ordered correspondence points in voxel coordinates.
struct PointModel {
  std::vector<Vec3> points;

  std::size_t size() const { return points.size(); }

  // Flattened (x0, y0, z0, x1, ...) of length 3M.
  Eigen::VectorXd flat() const {
    Eigen::VectorXd v(3 * static_cast<Eigen::Index>(points.size()));
    for (std::size_t i = 0; i < points.size(); ++i) v.segment<3>(3 * static_cast<Eigen::Index>(i)) = points[i];
    return v;
  }

  static PointModel from_flat(const Eigen::VectorXd& v) {
    if (v.size() % 3 != 0) throw ShapeError("PointModel::from_flat: length is not a multiple of 3");
    PointModel p;
    for (Eigen::Index i = 0; i < v.size() / 3; ++i) p.points.emplace_back(v.segment<3>(3 * i));
    return p;
  }

  bool finite() const {
    for (const auto& p : points)
      if (!p.allFinite()) return false;
    return true;
  }
};

// ShapeWorks-style `.particles`: one "x y z" line per point.
inline void write_particles(const std::string& path, const PointModel& pm) {
  std::ofstream out(path);
  if (!out) throw IoError(path, "cannot open for writing");
  out.precision(9);
  for (const auto& p : pm.points) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  if (!out) throw IoError(path, "write failed");
}

inline PointModel read_particles(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open for reading");
  PointModel pm;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Vec3 p;
    if (!(ls >> p.x() >> p.y() >> p.z())) throw IoError(path, "malformed particle line: " + line);
    pm.points.push_back(p);
  }
  return pm;
}

}  // namespace bvib::shapegen
