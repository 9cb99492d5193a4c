#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "bvib/shapegen/dataset.hpp"
#include "bvib/shapegen/superformula.hpp"

using namespace bvib::shapegen;

TEST(Superformula, UnitCircleOnDenseGrid) {
  const auto p = SupershapeParams::unit_circle();
  for (int i = 0; i < 1000; ++i) {
    const double theta = -std::numbers::pi + 2 * std::numbers::pi * i / 999.0;
    EXPECT_NEAR(superformula_radius(theta, p), 1.0, 1e-12) << theta;
  }
}

TEST(Superformula, ZeroAngleIsOneForUnitA) {
  for (int m = 3; m <= 7; ++m) {
    SupershapeParams p{m, 3.7, 0.4, 9.1, 1.0, 1.0};
    EXPECT_DOUBLE_EQ(superformula_radius(0.0, p), 1.0);
  }
}

TEST(Superformula, MatchesHighPrecisionEvaluation) {
  // 40-digit mpmath evaluation of the same formula.
  SupershapeParams p{5, 3.0, 4.0, 2.0, 1.0, 1.0};
  EXPECT_NEAR(superformula_radius(0.7, p), 1.096784154866624914215869473597838791756, 1e-14);
}

TEST(Superformula, RejectsExponentBelowFloor) {
  SupershapeParams p{4, 0.005, 2.0, 2.0, 1.0, 1.0};
  EXPECT_THROW(superformula_radius(0.3, p), bvib::DomainError);
}

TEST(Superformula, UnderflowingSumIsDomainError) {
  // Both |cos|^n2 and |sin|^n3 underflow to zero at 45 degrees.
  SupershapeParams p{4, 2.0, 5000.0, 5000.0, 1.0, 1.0};
  EXPECT_THROW(superformula_radius(std::numbers::pi / 4, p), bvib::DomainError);
}

TEST(SupershapePoint, UnitSphereLandmarks) {
  const auto p = SupershapeParams::unit_circle();
  const Vec3 a = supershape_point(0.0, 0.0, p);
  EXPECT_NEAR((a - Vec3(1, 0, 0)).norm(), 0.0, 1e-15);
  const Vec3 b = supershape_point(0.0, std::numbers::pi / 2, p);
  EXPECT_NEAR((b - Vec3(0, 0, 1)).norm(), 0.0, 1e-15);
}

TEST(SupershapePoint, MatchesHighPrecisionEvaluation) {
  SupershapeParams p{6, 2.5, 7.25, 0.8, 1.0, 1.0};
  const Vec3 v = supershape_point(1.9, -0.45, p);
  EXPECT_NEAR(v.x(), -0.2986230496524075528147722993172648340673, 1e-13);
  EXPECT_NEAR(v.y(), 0.8740987864630592637050831080403477637553, 1e-13);
  EXPECT_NEAR(v.z(), -0.4635979524376348600504212628573007407294, 1e-13);
}

TEST(SampleParams, LobesAndChiSquareMean) {
  bvib::Rng rng = bvib::make_rng(7);
  double n1_sum = 0.0;
  int lobe_counts[8] = {};
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    const auto p = sample_supershape_params(rng);
    ASSERT_TRUE(p.valid());
    n1_sum += p.n1;
    ++lobe_counts[p.m];
  }
  // chi-square(4) has mean 4.
  EXPECT_NEAR(n1_sum / n, 4.0, 0.3);
  for (int m = 3; m <= 7; ++m) EXPECT_GT(lobe_counts[m], 120) << m;
}

TEST(GenerateShape, SameSeedIsBitIdentical) {
  ShapeSamplingConfig cfg;
  const auto a = generate_shape(42, cfg);
  const auto b = generate_shape(42, cfg);
  ASSERT_EQ(a.mesh.vertices.size(), b.mesh.vertices.size());
  for (std::size_t i = 0; i < a.mesh.vertices.size(); ++i) EXPECT_EQ(a.mesh.vertices[i], b.mesh.vertices[i]);
  EXPECT_EQ(a.mesh.faces, b.mesh.faces);
  for (std::size_t i = 0; i < a.points.size(); ++i) EXPECT_EQ(a.points.points[i], b.points.points[i]);
}

TEST(GenerateShape, CorrespondenceLocationsAreShared) {
  ShapeSamplingConfig cfg;
  const auto params = correspondence_parameters(cfg.n_points);
  const auto a = generate_shape(1, cfg);
  const auto a2 = make_shape(a.params, cfg);
  for (std::size_t i = 0; i < params.size(); ++i) EXPECT_EQ(a.points.points[i], a2.points.points[i]);
  // Undo the normalization: each raw point is supershape_point at the shared (theta, phi).
  const auto raw = supershape_mesh(a.params, cfg.n_theta, cfg.n_phi);
  const auto norm = GridNormalization::fit(raw, cfg.dims);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Vec3 expected = norm.apply(supershape_point(params[i].first, params[i].second, a.params));
    EXPECT_NEAR((expected - a.points.points[i]).norm(), 0.0, 1e-12);
  }
}

TEST(GenerateShape, RejectsCoarseGrid) {
  ShapeSamplingConfig cfg;
  cfg.n_phi = 4;
  EXPECT_THROW(generate_shape(3, cfg), bvib::DomainError);
}
