#pragma once

#include <cmath>
#include <random>
#include <string>

#include <Eigen/Core>

#include "bvib/error.hpp"
#include "bvib/random.hpp"

namespace bvib::shapegen {

using Vec3 = Eigen::Vector3d;

// Exponents at or below this floor make -1/n1 numerically singular.
inline constexpr double kExponentFloor = 1e-2;

struct SupershapeParams {
  int m = 4;
  double n1 = 2.0;
  double n2 = 2.0;
  double n3 = 2.0;
  double a = 1.0;
  double b = 1.0;

  bool valid() const {
    return m >= 3 && m <= 7 && n1 > kExponentFloor && n2 > kExponentFloor && n3 > kExponentFloor && a > 0.0 &&
           b > 0.0 && std::isfinite(n1) && std::isfinite(n2) && std::isfinite(n3);
  }

  // m = 4, n1 = n2 = n3 = 2 traces the unit circle (the spherical product is the unit sphere).
  static SupershapeParams unit_circle() {
    SupershapeParams p;
    p.m = 4;
    return p;
  }
};

namespace detail {
inline double superformula_unchecked(double theta, const SupershapeParams& p) {
  const double t = p.m * theta / 4.0;
  const double sum = std::pow(std::abs(std::cos(t) / p.a), p.n2) + std::pow(std::abs(std::sin(t) / p.b), p.n3);
  if (!(sum > 0.0) || !std::isfinite(sum))
    throw DomainError("superformula: bracketed sum is " + std::to_string(sum) + " (invalid parameters)");
  const double r = std::pow(sum, -1.0 / p.n1);
  if (!std::isfinite(r) || !(r > 0.0)) throw DomainError("superformula: radius overflow");
  return r;
}
}  // namespace detail

// Gielis superformula r(theta) = (|cos(m theta/4)/a|^n2 + |sin(m theta/4)/b|^n3)^(-1/n1).
inline double superformula_radius(double theta, const SupershapeParams& p) {
  if (!(p.n1 > kExponentFloor && p.n2 > kExponentFloor && p.n3 > kExponentFloor && p.a > 0 && p.b > 0))
    throw DomainError("superformula: parameters violate exponent floor or positivity");
  return detail::superformula_unchecked(theta, p);
}

// Spherical product of two superformula curves driven by the same parameters.
// theta in [-pi, pi] is the longitude, phi in [-pi/2, pi/2] the latitude.
inline Vec3 supershape_point(double theta, double phi, const SupershapeParams& p) {
  const double r1 = superformula_radius(theta, p);
  const double r2 = superformula_radius(phi, p);
  return {r1 * std::cos(theta) * r2 * std::cos(phi), r1 * std::sin(theta) * r2 * std::cos(phi),
          r2 * std::sin(phi)};
}

// m uniform over {3..7}; curvature exponents chi-square with 4 degrees of
// freedom, redrawn (at most 100 times) when below the exponent floor.
inline SupershapeParams sample_supershape_params(Rng& rng) {
  std::uniform_int_distribution<int> lobes(3, 7);
  std::chi_squared_distribution<double> chi2(4.0);
  SupershapeParams p;
  p.m = lobes(rng);
  for (int attempt = 0; attempt < 100; ++attempt) {
    p.n1 = chi2(rng);
    p.n2 = chi2(rng);
    p.n3 = chi2(rng);
    if (p.valid()) return p;
  }
  throw DomainError("sample_supershape_params: exponent floor violated after 100 retries");
}

}  // namespace bvib::shapegen
