#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "bvib/error.hpp"
#include "bvib/shapegen/superformula.hpp"

namespace bvib::shapegen {

using Face = std::array<int, 3>;

struct SurfaceMesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;

  bool indices_valid() const {
    const int n = static_cast<int>(vertices.size());
    return std::all_of(faces.begin(), faces.end(), [n](const Face& f) {
      return f[0] >= 0 && f[1] >= 0 && f[2] >= 0 && f[0] < n && f[1] < n && f[2] < n;
    });
  }

  double face_area(std::size_t f) const {
    const auto& t = faces[f];
    return 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
  }

  // Every undirected edge is shared by exactly two faces.
  bool is_closed() const {
    if (faces.empty() || !indices_valid()) return false;
    std::map<std::pair<int, int>, int> count;
    for (const auto& f : faces) {
      for (int e = 0; e < 3; ++e) {
        int a = f[e], b = f[(e + 1) % 3];
        if (a == b) return false;
        if (a > b) std::swap(a, b);
        ++count[{a, b}];
      }
    }
    return std::all_of(count.begin(), count.end(), [](const auto& kv) { return kv.second == 2; });
  }

  // Positive when faces are oriented outward.
  double signed_volume() const {
    double v = 0.0;
    for (const auto& f : faces) v += vertices[f[0]].dot(vertices[f[1]].cross(vertices[f[2]])) / 6.0;
    return v;
  }

  // Volume centroid of the enclosed solid.
  Vec3 centroid() const {
    Vec3 c = Vec3::Zero();
    double vol = 0.0;
    for (const auto& f : faces) {
      const Vec3& a = vertices[f[0]];
      const Vec3& b = vertices[f[1]];
      const Vec3& d = vertices[f[2]];
      const double v = a.dot(b.cross(d)) / 6.0;
      c += v * (a + b + d) / 4.0;
      vol += v;
    }
    if (std::abs(vol) < 1e-300) throw DomainError("centroid: mesh encloses zero volume");
    return c / vol;
  }

  void flip_orientation() {
    for (auto& f : faces) std::swap(f[1], f[2]);
  }

  Eigen::AlignedBox3d bounds() const {
    Eigen::AlignedBox3d box;
    for (const auto& v : vertices) box.extend(v);
    return box;
  }
};

// Closed mesh on a regular (theta, phi) grid: n_theta longitudes, n_phi - 1
// latitude rings, with the poles collapsed to fan triangles. Faces are
// oriented outward.
template <typename PointFn>
SurfaceMesh build_parametric_mesh(int n_theta, int n_phi, PointFn&& point) {
  if (n_theta < 3 || n_phi < 2) throw DomainError("build_parametric_mesh: grid too coarse");
  constexpr double pi = std::numbers::pi;
  SurfaceMesh mesh;
  mesh.vertices.push_back(point(0.0, -pi / 2));
  for (int j = 1; j < n_phi; ++j) {
    const double phi = -pi / 2 + pi * j / n_phi;
    for (int i = 0; i < n_theta; ++i) mesh.vertices.push_back(point(-pi + 2 * pi * i / n_theta, phi));
  }
  mesh.vertices.push_back(point(0.0, pi / 2));
  const int south = 0;
  const int north = static_cast<int>(mesh.vertices.size()) - 1;
  auto ring = [n_theta](int j, int i) { return 1 + (j - 1) * n_theta + (i % n_theta); };

  for (int i = 0; i < n_theta; ++i) mesh.faces.push_back({south, ring(1, i + 1), ring(1, i)});
  for (int j = 1; j < n_phi - 1; ++j) {
    for (int i = 0; i < n_theta; ++i) {
      mesh.faces.push_back({ring(j, i), ring(j, i + 1), ring(j + 1, i + 1)});
      mesh.faces.push_back({ring(j, i), ring(j + 1, i + 1), ring(j + 1, i)});
    }
  }
  for (int i = 0; i < n_theta; ++i) mesh.faces.push_back({north, ring(n_phi - 1, i), ring(n_phi - 1, i + 1)});
  if (mesh.signed_volume() < 0) mesh.flip_orientation();
  return mesh;
}

inline SurfaceMesh supershape_mesh(const SupershapeParams& p, int n_theta, int n_phi) {
  return build_parametric_mesh(n_theta, n_phi, [&](double t, double f) { return supershape_point(t, f, p); });
}

inline SurfaceMesh sphere_mesh(double radius, int n_theta, int n_phi, const Vec3& center = Vec3::Zero()) {
  return build_parametric_mesh(n_theta, n_phi, [&](double t, double f) {
    return Vec3(center + radius * Vec3(std::cos(t) * std::cos(f), std::sin(t) * std::cos(f), std::sin(f)));
  });
}

// Near-uniform directions on the unit sphere (Fibonacci lattice).
inline std::vector<Vec3> fibonacci_directions(int count) {
  std::vector<Vec3> dirs;
  dirs.reserve(static_cast<std::size_t>(count));
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < count; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / count;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double a = golden * i;
    dirs.emplace_back(r * std::cos(a), r * std::sin(a), z);
  }
  return dirs;
}

// (theta, phi) parameter locations shared by every shape's correspondence points.
inline std::vector<std::pair<double, double>> correspondence_parameters(int count) {
  std::vector<std::pair<double, double>> params;
  for (const auto& d : fibonacci_directions(count))
    params.emplace_back(std::atan2(d.y(), d.x()), std::asin(std::clamp(d.z(), -1.0, 1.0)));
  return params;
}

namespace detail {

inline std::vector<Face> hull_faces_from_candidates(const std::vector<Vec3>& pts,
                                                    const std::vector<std::vector<int>>& neighbours) {
  const int n = static_cast<int>(pts.size());
  std::vector<Face> faces;
  std::map<std::array<int, 3>, bool> seen;
  for (int i = 0; i < n; ++i) {
    const auto& nb = neighbours[static_cast<std::size_t>(i)];
    for (std::size_t a = 0; a < nb.size(); ++a) {
      for (std::size_t b = a + 1; b < nb.size(); ++b) {
        std::array<int, 3> key{i, nb[a], nb[b]};
        std::sort(key.begin(), key.end());
        if (key[0] == key[1] || key[1] == key[2] || seen.count(key)) continue;
        seen[key] = true;
        const Vec3& p0 = pts[key[0]];
        Vec3 normal = (pts[key[1]] - p0).cross(pts[key[2]] - p0);
        const double len = normal.norm();
        if (len < 1e-14) continue;
        normal /= len;
        if (normal.dot(p0) < 0) normal = -normal;
        bool supporting = true;
        for (int q = 0; q < n && supporting; ++q) {
          if (q == key[0] || q == key[1] || q == key[2]) continue;
          supporting = normal.dot(pts[q] - p0) < -1e-12;
        }
        if (!supporting) continue;
        Face f{key[0], key[1], key[2]};
        if ((pts[f[1]] - pts[f[0]]).cross(pts[f[2]] - pts[f[0]]).dot(pts[f[0]]) < 0) std::swap(f[1], f[2]);
        faces.push_back(f);
      }
    }
  }
  return faces;
}

}  // namespace detail

// Triangulation of the correspondence points on the template sphere (their
// convex hull). Because every shape is the image of the same parameter
// locations, this connectivity is valid for every shape in a dataset.
inline std::vector<Face> template_faces(int count) {
  if (count < 4) throw DomainError("template_faces: need at least 4 points");
  const auto pts = fibonacci_directions(count);
  const int n = count;
  auto faces_with_k = [&](int k) {
    std::vector<std::vector<int>> nb(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      std::vector<std::pair<double, int>> d;
      for (int j = 0; j < n; ++j)
        if (j != i) d.emplace_back((pts[j] - pts[i]).squaredNorm(), j);
      std::partial_sort(d.begin(), d.begin() + std::min<std::ptrdiff_t>(k, n - 1), d.end());
      for (int j = 0; j < std::min(k, n - 1); ++j) nb[static_cast<std::size_t>(i)].push_back(d[j].second);
    }
    return detail::hull_faces_from_candidates(pts, nb);
  };
  for (int k : {12, 20, n - 1}) {
    SurfaceMesh m{{pts.begin(), pts.end()}, faces_with_k(k)};
    if (static_cast<int>(m.faces.size()) == 2 * n - 4 && m.is_closed()) return m.faces;
  }
  throw DomainError("template_faces: could not triangulate the correspondence lattice");
}

inline void write_off(const std::string& path, const SurfaceMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw IoError(path, "cannot open for writing");
  out.precision(9);
  out << "OFF\n" << mesh.vertices.size() << ' ' << mesh.faces.size() << " 0\n";
  for (const auto& v : mesh.vertices) out << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& f : mesh.faces) out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
  if (!out) throw IoError(path, "write failed");
}

inline SurfaceMesh read_off(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open for reading");
  std::string magic;
  in >> magic;
  if (magic != "OFF") throw IoError(path, "not an OFF file");
  std::size_t nv = 0, nf = 0, ne = 0;
  in >> nv >> nf >> ne;
  SurfaceMesh mesh;
  mesh.vertices.resize(nv);
  for (auto& v : mesh.vertices) in >> v.x() >> v.y() >> v.z();
  mesh.faces.resize(nf);
  for (auto& f : mesh.faces) {
    int k = 0;
    in >> k >> f[0] >> f[1] >> f[2];
    if (k != 3) throw IoError(path, "only triangle faces are supported");
  }
  if (!in) throw IoError(path, "truncated OFF file");
  if (!mesh.indices_valid()) throw IoError(path, "face index out of range");
  return mesh;
}

}  // namespace bvib::shapegen
