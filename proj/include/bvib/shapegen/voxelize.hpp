#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "bvib/error.hpp"
#include "bvib/shapegen/mesh.hpp"
#include "bvib/shapegen/volume.hpp"

namespace bvib::shapegen {

// Fraction of the smallest grid extent spanned by a normalized shape.
inline constexpr double kGridFill = 0.7;

// Similarity transform that centres a shape's volume centroid in the grid and
// scales it so that its largest axis-aligned half-extent about that centre is
// kGridFill / 2 of the smallest grid dimension.
struct GridNormalization {
  Vec3 source_center = Vec3::Zero();
  double scale = 1.0;
  Vec3 target_center = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return (p - source_center) * scale + target_center; }

  SurfaceMesh apply(const SurfaceMesh& m) const {
    SurfaceMesh out = m;
    for (auto& v : out.vertices) v = apply(v);
    return out;
  }

  static GridNormalization fit(const SurfaceMesh& mesh, const Dims& dims) {
    GridNormalization n;
    n.source_center = mesh.centroid();
    double half = 0.0;
    for (const auto& v : mesh.vertices) half = std::max(half, (v - n.source_center).cwiseAbs().maxCoeff());
    if (!(half > 0.0)) throw DomainError("GridNormalization: degenerate mesh extent");
    const int min_dim = std::min({dims[0], dims[1], dims[2]});
    n.scale = 0.5 * kGridFill * min_dim / half;
    n.target_center = Vec3(dims[0], dims[1], dims[2]) / 2.0;
    return n;
  }
};

namespace detail {

// Signed solid angle of triangle (a, b, c) seen from the origin.
inline double solid_angle(const Vec3& a, const Vec3& b, const Vec3& c) {
  const double la = a.norm(), lb = b.norm(), lc = c.norm();
  const double num = a.dot(b.cross(c));
  const double den = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
  return 2.0 * std::atan2(num, den);
}

inline double winding_number(const SurfaceMesh& mesh, const Vec3& q) {
  double w = 0.0;
  for (const auto& f : mesh.faces)
    w += solid_angle(mesh.vertices[f[0]] - q, mesh.vertices[f[1]] - q, mesh.vertices[f[2]] - q);
  return w / (4.0 * std::numbers::pi);
}

}  // namespace detail

// Binary occupancy of a closed mesh already expressed in voxel coordinates.
//
// Each (i, j) column is resolved with a vertical ray: crossings are signed by
// the facing of the hit triangle, and a voxel is inside when the running
// winding count below its centre is non-zero. A column whose crossings do not
// cancel (the ray grazed an edge or vertex) is re-evaluated voxel by voxel with
// the generalized winding number. Both tests ignore face orientation.
inline Volume voxelize(const SurfaceMesh& mesh, const Dims& dims) {
  if (!mesh.is_closed()) throw DomainError("voxelize: mesh is not closed");
  const auto box = mesh.bounds();
  const double diag = box.diagonal().norm();
  if (!(std::abs(mesh.signed_volume()) > 1e-9 * diag * diag * diag))
    throw DomainError("voxelize: mesh encloses no volume");
  if ((box.min().array() < 0.0).any() ||
      (box.max().array() > Eigen::Array3d(dims[0], dims[1], dims[2])).any())
    throw DomainError("voxelize: mesh exceeds the grid; normalize it first");

  Volume out(dims);
  const double jx = 1.3e-7, jy = 2.9e-7;  // keeps rays off grid-aligned edges
  std::vector<std::vector<std::pair<double, int>>> hits(static_cast<std::size_t>(dims[0]) * dims[1]);
  for (const auto& f : mesh.faces) {
    const Vec3& a = mesh.vertices[f[0]];
    const Vec3& b = mesh.vertices[f[1]];
    const Vec3& c = mesh.vertices[f[2]];
    const double area2 = (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
    if (area2 == 0.0) continue;  // vertical or degenerate: parallel to the ray
    const int i0 = std::max(0, static_cast<int>(std::floor(std::min({a.x(), b.x(), c.x()}) - 0.5)));
    const int i1 = std::min(dims[0] - 1, static_cast<int>(std::ceil(std::max({a.x(), b.x(), c.x()}) - 0.5)));
    const int j0 = std::max(0, static_cast<int>(std::floor(std::min({a.y(), b.y(), c.y()}) - 0.5)));
    const int j1 = std::min(dims[1] - 1, static_cast<int>(std::ceil(std::max({a.y(), b.y(), c.y()}) - 0.5)));
    for (int i = i0; i <= i1; ++i) {
      for (int j = j0; j <= j1; ++j) {
        const double px = i + 0.5 + jx, py = j + 0.5 + jy;
        const double w0 = (b.x() - px) * (c.y() - py) - (b.y() - py) * (c.x() - px);
        const double w1 = (c.x() - px) * (a.y() - py) - (c.y() - py) * (a.x() - px);
        const double w2 = (a.x() - px) * (b.y() - py) - (a.y() - py) * (b.x() - px);
        const bool inside = (w0 > 0 && w1 > 0 && w2 > 0) || (w0 < 0 && w1 < 0 && w2 < 0);
        if (!inside) continue;
        const double z = (w0 * a.z() + w1 * b.z() + w2 * c.z()) / area2;
        hits[static_cast<std::size_t>(i) * dims[1] + static_cast<std::size_t>(j)].emplace_back(z, area2 > 0 ? 1 : -1);
      }
    }
  }

  for (int i = 0; i < dims[0]; ++i) {
    for (int j = 0; j < dims[1]; ++j) {
      auto& col = hits[static_cast<std::size_t>(i) * dims[1] + static_cast<std::size_t>(j)];
      int total = 0;
      for (const auto& h : col) total += h.second;
      if (total != 0) {
        for (int k = 0; k < dims[2]; ++k)
          out.at(i, j, k) = std::abs(detail::winding_number(mesh, Vec3(i + 0.5, j + 0.5, k + 0.5))) > 0.5 ? 1.0f : 0.0f;
        continue;
      }
      std::sort(col.begin(), col.end());
      std::size_t h = 0;
      int winding = 0;
      for (int k = 0; k < dims[2]; ++k) {
        const double zc = k + 0.5;
        while (h < col.size() && col[h].first < zc) winding += col[h++].second;
        out.at(i, j, k) = winding != 0 ? 1.0f : 0.0f;
      }
    }
  }
  return out;
}

}  // namespace bvib::shapegen
