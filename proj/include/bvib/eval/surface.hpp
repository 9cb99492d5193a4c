#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "bvib/error.hpp"
#include "bvib/random.hpp"
#include "bvib/shapegen/mesh.hpp"
#include "bvib/shapegen/point_model.hpp"

namespace bvib::eval {

using shapegen::Face;
using shapegen::SurfaceMesh;
using shapegen::Vec3;

inline SurfaceMesh reconstruct_mesh(const shapegen::PointModel& p, const std::vector<Face>& template_faces) {
  SurfaceMesh m;
  m.vertices = p.points;
  m.faces = template_faces;
  if (!m.indices_valid()) throw ShapeError("reconstruct_mesh: point count does not match the template connectivity");
  return m;
}

// Closest point on triangle abc to p (Ericson, Real-Time Collision Detection 5.1.5).
inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + ab * (d1 / (d1 - d3));
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + ac * (d2 / (d2 - d6));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

// Bounding volume hierarchy over mesh triangles for nearest-surface queries.
class TriangleBvh {
 public:
  explicit TriangleBvh(const SurfaceMesh& mesh) : mesh_(&mesh) {
    if (mesh.faces.empty() || !mesh.indices_valid()) throw DomainError("TriangleBvh: empty or invalid mesh");
    order_.resize(mesh.faces.size());
    std::iota(order_.begin(), order_.end(), 0);
    centroids_.reserve(mesh.faces.size());
    for (const auto& f : mesh.faces)
      centroids_.push_back((mesh.vertices[f[0]] + mesh.vertices[f[1]] + mesh.vertices[f[2]]) / 3.0);
    nodes_.reserve(2 * mesh.faces.size());
    build(0, static_cast<int>(order_.size()));
  }

  double distance(const Vec3& p) const {
    double best = std::numeric_limits<double>::infinity();
    query(0, p, best);
    return std::sqrt(best);
  }

 private:
  struct Node {
    Vec3 lo, hi;
    int begin, end;     // face range in order_ (leaves)
    int left = -1, right = -1;
  };

  int build(int begin, int end) {
    Node n;
    n.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    n.hi = -n.lo;
    for (int i = begin; i < end; ++i)
      for (int v : mesh_->faces[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])]) {
        n.lo = n.lo.cwiseMin(mesh_->vertices[static_cast<std::size_t>(v)]);
        n.hi = n.hi.cwiseMax(mesh_->vertices[static_cast<std::size_t>(v)]);
      }
    n.begin = begin;
    n.end = end;
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(n);
    if (end - begin <= 4) return id;
    Eigen::Index axis;
    (n.hi - n.lo).maxCoeff(&axis);
    const int mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) { return centroids_[static_cast<std::size_t>(a)](axis) < centroids_[static_cast<std::size_t>(b)](axis); });
    const int l = build(begin, mid);
    const int r = build(mid, end);
    nodes_[static_cast<std::size_t>(id)].left = l;
    nodes_[static_cast<std::size_t>(id)].right = r;
    return id;
  }

  static double box_sq(const Node& n, const Vec3& p) {
    const Vec3 d = (n.lo - p).cwiseMax(p - n.hi).cwiseMax(0.0);
    return d.squaredNorm();
  }

  void query(int id, const Vec3& p, double& best) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.left < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const Face& f = mesh_->faces[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])];
        const Vec3 q = closest_point_on_triangle(p, mesh_->vertices[static_cast<std::size_t>(f[0])],
                                                 mesh_->vertices[static_cast<std::size_t>(f[1])],
                                                 mesh_->vertices[static_cast<std::size_t>(f[2])]);
        best = std::min(best, (q - p).squaredNorm());
      }
      return;
    }
    const double dl = box_sq(nodes_[static_cast<std::size_t>(n.left)], p);
    const double dr = box_sq(nodes_[static_cast<std::size_t>(n.right)], p);
    const int first = dl <= dr ? n.left : n.right, second = dl <= dr ? n.right : n.left;
    if (std::min(dl, dr) < best) query(first, p, best);
    if (std::max(dl, dr) < best) query(second, p, best);
  }

  const SurfaceMesh* mesh_;
  std::vector<int> order_;
  std::vector<Vec3> centroids_;
  std::vector<Node> nodes_;
};

// n points uniformly distributed by area.
inline std::vector<Vec3> sample_surface(const SurfaceMesh& m, int n, std::uint64_t seed) {
  if (m.faces.empty()) throw DomainError("sample_surface: mesh has no faces");
  std::vector<double> cum(m.faces.size());
  double acc = 0.0;
  for (std::size_t f = 0; f < m.faces.size(); ++f) cum[f] = acc += m.face_area(f);
  if (!(acc > 0.0)) throw DomainError("sample_surface: mesh has zero area");
  Rng rng = make_rng(seed, 0x5a3f);
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double target = uniform_open01(rng) * acc;
    const auto f = static_cast<std::size_t>(std::min<std::ptrdiff_t>(
        std::lower_bound(cum.begin(), cum.end(), target) - cum.begin(), static_cast<std::ptrdiff_t>(cum.size()) - 1));
    const double r1 = std::sqrt(uniform_open01(rng)), r2 = uniform_open01(rng);
    const Face& t = m.faces[f];
    pts.push_back((1 - r1) * m.vertices[static_cast<std::size_t>(t[0])] + r1 * (1 - r2) * m.vertices[static_cast<std::size_t>(t[1])] +
                  r1 * r2 * m.vertices[static_cast<std::size_t>(t[2])]);
  }
  return pts;
}

struct SurfaceDistance {
  double mean = 0.0;  // mean of the two directed mean distances
  double max = 0.0;   // largest sampled closest-point distance in either direction
};

inline SurfaceDistance surface_distance(const SurfaceMesh& a, const SurfaceMesh& b, int n_samples = 10000,
                                        std::uint64_t seed = 0) {
  if (n_samples < 1) throw DomainError("surface_distance: n_samples must be >= 1");
  const TriangleBvh ta(a), tb(b);
  auto directed = [&](const SurfaceMesh& from, const TriangleBvh& to, double& mx) {
    double s = 0.0;
    for (const auto& p : sample_surface(from, n_samples, seed)) {
      const double d = to.distance(p);
      s += d;
      mx = std::max(mx, d);
    }
    return s / n_samples;
  };
  SurfaceDistance out;
  const double ab = directed(a, tb, out.max);
  const double ba = directed(b, ta, out.max);
  out.mean = 0.5 * (ab + ba);
  return out;
}

inline double surface_to_surface(const SurfaceMesh& a, const SurfaceMesh& b, int n_samples = 10000, std::uint64_t seed = 0) {
  return surface_distance(a, b, n_samples, seed).mean;
}

}  // namespace bvib::eval
