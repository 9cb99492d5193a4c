#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include <Eigen/Eigenvalues>

#include "bvib/eval/calibration.hpp"
#include "bvib/eval/metrics.hpp"
#include "bvib/eval/pca.hpp"
#include "bvib/eval/surface.hpp"
#include "bvib/shapegen/mesh.hpp"

using namespace bvib;
using namespace bvib::eval;

TEST(Rmse, Values) {
  const Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(9, -1, 2);
  EXPECT_EQ(rmse(y, y), 0.0);
  EXPECT_DOUBLE_EQ(rmse(y, y.array() + 1.0), 1.0);
  Eigen::VectorXd a(3), b(3);
  a << 0.3, -1.1, 2.0;
  b << 0.1, -0.5, 1.4;
  EXPECT_NEAR(rmse(a, b), std::sqrt(0.76 / 3.0), 1e-15);
}

TEST(Pearson, Values) {
  Rng rng = make_rng(1);
  Eigen::VectorXd a(50), c(50);
  for (int i = 0; i < 50; ++i) a(i) = standard_normal(rng), c(i) = standard_normal(rng);
  EXPECT_NEAR(pearson_r(a, Eigen::VectorXd(2 * a.array() + 3)), 1.0, 1e-15);
  EXPECT_NEAR(pearson_r(a, Eigen::VectorXd(-a)), -1.0, 1e-15);
  const double ma = a.mean(), mc = c.mean();
  double sab = 0, saa = 0, scc = 0;
  for (int i = 0; i < 50; ++i) {
    sab += (a(i) - ma) * (c(i) - mc);
    saa += (a(i) - ma) * (a(i) - ma);
    scc += (c(i) - mc) * (c(i) - mc);
  }
  EXPECT_NEAR(pearson_r(a, c), sab / std::sqrt(saa * scc), 1e-14);
  EXPECT_THROW(pearson_r(a, Eigen::VectorXd::Ones(50)), DomainError);
  EXPECT_THROW(pearson_r(Eigen::VectorXd::Ones(2), Eigen::VectorXd::Ones(2)), DomainError);
}

TEST(ReconstructMesh, TemplateConnectivity) {
  const auto dirs = shapegen::fibonacci_directions(32);
  const auto faces = shapegen::template_faces(32);
  shapegen::PointModel p{dirs};
  const auto m = reconstruct_mesh(p, faces);
  EXPECT_EQ(m.vertices, dirs);
  EXPECT_EQ(m.faces, faces);
  for (auto& v : p.points) v += Vec3(1, 2, 3);
  const auto t = reconstruct_mesh(p, faces);
  EXPECT_EQ(t.faces, faces);
  EXPECT_EQ(t.vertices[5], dirs[5] + Vec3(1, 2, 3));
  p.points.pop_back();
  EXPECT_THROW(reconstruct_mesh(p, faces), ShapeError);
}

TEST(SurfaceDistance, ClosestPointMatchesBruteForce) {
  const auto mesh = shapegen::sphere_mesh(2.0, 24, 12, Vec3(0.5, -0.2, 0.1));
  const TriangleBvh bvh(mesh);
  Rng rng = make_rng(4);
  for (int i = 0; i < 200; ++i) {
    const Vec3 p(3 * standard_normal(rng), 3 * standard_normal(rng), 3 * standard_normal(rng));
    double best = 1e300;
    for (const auto& f : mesh.faces)
      best = std::min(best, (closest_point_on_triangle(p, mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]) - p).norm());
    EXPECT_NEAR(bvh.distance(p), best, 1e-12);
  }
}

TEST(SurfaceDistance, IdenticalAndSymmetric) {
  const auto a = shapegen::sphere_mesh(1.0, 32, 16);
  const auto b = shapegen::supershape_mesh({5, 3.0, 4.0, 2.5, 1.0, 1.0}, 32, 16);
  EXPECT_LT(surface_to_surface(a, a, 2000), 1e-9);
  EXPECT_EQ(surface_to_surface(a, b, 2000, 3), surface_to_surface(b, a, 2000, 3));
  const auto d = surface_distance(a, b, 2000);
  EXPECT_GE(d.max, d.mean);
}

TEST(SurfaceDistance, ConcentricSpheres) {
  const auto a = shapegen::sphere_mesh(1.0, 256, 128);
  const auto b = shapegen::sphere_mesh(1.1, 256, 128);
  EXPECT_NEAR(surface_to_surface(a, b), 0.1, 0.002);
}

TEST(Pca, ExactSubspaceRetainsItsDimension) {
  Rng rng = make_rng(5);
  const int n = 40, f = 10, k = 3;
  Eigen::MatrixXd basis = Eigen::MatrixXd::Random(f, k);
  Eigen::MatrixXd coeff(n, k);
  for (Eigen::Index i = 0; i < coeff.size(); ++i) coeff.data()[i] = standard_normal(rng);
  const Eigen::MatrixXd data = (coeff * basis.transpose()).rowwise() + Eigen::RowVectorXd::LinSpaced(f, 1, 5);
  EXPECT_EQ(fit_pca(data, 1.0).components(), k);
  EXPECT_NEAR(fit_pca(data, 1.0).retained_fraction, 1.0, 1e-12);
}

TEST(Pca, IsotropicGaussianKeepsBoth) {
  Rng rng = make_rng(6);
  Eigen::MatrixXd data(2000, 2);
  for (Eigen::Index i = 0; i < data.size(); ++i) data.data()[i] = standard_normal(rng);
  const auto p = fit_pca(data, 0.95);
  EXPECT_EQ(p.components(), 2);
}

TEST(Pca, MatchesDenseEigensolver) {
  Rng rng = make_rng(7);
  const int n = 60, f = 8;
  Eigen::MatrixXd data(n, f);
  for (int j = 0; j < f; ++j)
    for (int i = 0; i < n; ++i) data(i, j) = (j + 1) * standard_normal(rng) + 0.3 * j;
  const auto p = fit_pca(data, 1.0);
  const Eigen::MatrixXd c = data.rowwise() - data.colwise().mean();
  const Eigen::MatrixXd cov = c.transpose() * c / double(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  ASSERT_EQ(p.components(), f);
  for (int i = 0; i < f; ++i) {
    const int j = f - 1 - i;
    EXPECT_NEAR(p.eigenvalues(i), es.eigenvalues()(j), 1e-8 * es.eigenvalues()(j));
    const double dot = std::abs(p.directions.col(i).dot(es.eigenvectors().col(j)));
    EXPECT_NEAR(dot, 1.0, 1e-8);
  }
  EXPECT_LT((p.directions.transpose() * p.directions - Eigen::MatrixXd::Identity(f, f)).cwiseAbs().maxCoeff(), 1e-8);
  for (int i = 1; i < f; ++i) EXPECT_LE(p.eigenvalues(i), p.eigenvalues(i - 1));
}

TEST(Pca, ReconstructionErrorBounds) {
  Rng rng = make_rng(8);
  Eigen::MatrixXd data(30, 6);
  for (int j = 0; j < 6; ++j)
    for (int i = 0; i < 30; ++i) data(i, j) = std::pow(0.5, j) * standard_normal(rng);
  const auto p = fit_pca(data, 0.9);
  ASSERT_LT(p.components(), 6);
  const auto full = fit_pca(data, 1.0);
  for (int i = 0; i < 30; ++i) {
    const Eigen::VectorXd v = data.row(i).transpose();
    const double err = (v - p.reconstruct(v)).norm();
    const auto fullsvd = Eigen::JacobiSVD<Eigen::MatrixXd>(data.rowwise() - data.colwise().mean(), Eigen::ComputeThinV);
    const Eigen::MatrixXd discarded = fullsvd.matrixV().rightCols(6 - p.components());
    EXPECT_LE(err, (discarded.transpose() * (v - p.mean)).norm() + 1e-12);
    EXPECT_LT((v - full.reconstruct(v)).norm(), 1e-10);
  }
  EXPECT_THROW(fit_pca(Eigen::MatrixXd::Ones(5, 3)), DomainError);
  EXPECT_THROW(fit_pca(Eigen::MatrixXd::Ones(1, 3)), DomainError);
}

namespace {
Eigen::MatrixXd cloud(std::uint64_t seed, int n = 80, int f = 6) {
  Rng rng = make_rng(seed);
  Eigen::MatrixXd data(n, f);
  for (int j = 0; j < f; ++j)
    for (int i = 0; i < n; ++i) data(i, j) = std::pow(0.4, j) * standard_normal(rng) + j;
  return data;
}
}  // namespace

TEST(OutlierDegree, MeanAndTwoSigma) {
  const auto p = fit_pca(cloud(9));
  EXPECT_LT(outlier_degree(p.mean, p), 1e-9);
  const Eigen::VectorXd v = p.mean + 2.0 * std::sqrt(p.eigenvalues(0)) * p.directions.col(0);
  const auto t = outlier_terms(v, p);
  EXPECT_NEAR(t.within, 2.0, 1e-9);
  EXPECT_NEAR(t.off, 0.0, 1e-6);
}

TEST(OutlierDegree, HandBuiltTwoDimensionalSet) {
  Eigen::MatrixXd data(4, 2);
  data << -2, 0, 2, 0, 0, -0.3, 0, 0.3;
  const auto p = fit_pca(data, 0.95);
  ASSERT_EQ(p.components(), 1);
  EXPECT_NEAR(p.eigenvalues(0), 8.0 / 3.0, 1e-12);
  EXPECT_NEAR(p.residual_eigenvalue, 0.06, 1e-12);
  EXPECT_NEAR(outlier_degree(Eigen::Vector2d(1.0, 0.2), p), std::sqrt(3.0 / 8.0) + 0.2 / std::sqrt(0.06), 1e-12);
}

TEST(OutlierDegree, TranslationEquivariant) {
  const Eigen::MatrixXd data = cloud(10);
  Eigen::VectorXd shift = Eigen::VectorXd::LinSpaced(6, -50, 70);
  const auto p = fit_pca(data);
  const auto q = fit_pca(data.rowwise() + shift.transpose());
  Rng rng = make_rng(11);
  for (int i = 0; i < 20; ++i) {
    Eigen::VectorXd v(6);
    for (int j = 0; j < 6; ++j) v(j) = j + standard_normal(rng);
    EXPECT_NEAR(outlier_degree(v, p), outlier_degree(v + shift, q), 1e-9);
  }
}

TEST(OutlierDegree, MonotoneAlongRetainedDirections) {
  const auto p = fit_pca(cloud(12));
  for (Eigen::Index c = 0; c < p.components(); ++c) {
    double prev = -1.0;
    for (double r = 0.0; r <= 5.0; r += 0.25) {
      const double d = outlier_degree(p.mean + r * std::sqrt(p.eigenvalues(c)) * p.directions.col(c), p);
      EXPECT_GT(d, prev);
      prev = d;
    }
  }
}

TEST(OutlierDegree, ZeroResidualEigenvalue) {
  Eigen::MatrixXd data(3, 2);
  data << 0, 0, 1, 1, 2, 2;
  const auto p = fit_pca(data, 1.0);
  ASSERT_EQ(p.components(), 1);
  EXPECT_NEAR(outlier_degree(Eigen::Vector2d(3, 3), p), 2.0, 1e-12);
  // residual_eigenvalue = 0 since the single discarded direction has no variance
  EXPECT_THROW(outlier_degree(Eigen::Vector2d(3, 2), p), DomainError);
}

namespace {
std::vector<CalibrationInput> calibration_inputs(std::uint64_t seed, int n) {
  Rng rng = make_rng(seed);
  std::vector<CalibrationInput> out;
  for (int i = 0; i < n; ++i) {
    CalibrationInput in;
    in.id = i;
    in.split = "test";
    in.blur = 1 + 7 * uniform_open01(rng);
    in.truth = Eigen::VectorXd::Random(6);
    in.prediction = in.truth + 0.1 * (i + 1) * Eigen::VectorXd::Random(6);
    in.image = Eigen::VectorXd::Random(4);
    inference::SampleSet s;
    s.y_hat = Eigen::MatrixXd::Random(6, 3);
    s.sigma2 = Eigen::MatrixXd::Random(6, 3).cwiseAbs().array() + 0.1;
    in.report = inference::decompose_uncertainty(s);
    out.push_back(in);
  }
  return out;
}
}  // namespace

TEST(Calibration, ExactErrorTotalCorrelation) {
  auto inputs = calibration_inputs(1, 12);
  Eigen::MatrixXd shapes(12, 6), images(12, 4);
  for (int i = 0; i < 12; ++i) shapes.row(i) = inputs[i].truth, images.row(i) = inputs[i].image;
  auto t = build_calibration_table(inputs, fit_pca(shapes), fit_pca(images));
  for (auto& r : t.rows) r.total = 3.0 * r.error + 1.0;
  t.compute_correlations();
  EXPECT_NEAR(*t.r_error_total, 1.0, 1e-12);
}

TEST(Calibration, PermutationInvariantAndCsvRecomputable) {
  auto inputs = calibration_inputs(2, 15);
  Eigen::MatrixXd shapes(15, 6), images(15, 4);
  for (int i = 0; i < 15; ++i) shapes.row(i) = inputs[i].truth, images.row(i) = inputs[i].image;
  const auto ps = fit_pca(shapes), pi = fit_pca(images);
  const auto t = build_calibration_table(inputs, ps, pi);
  std::reverse(inputs.begin(), inputs.end());
  std::swap(inputs[2], inputs[9]);
  const auto u = build_calibration_table(inputs, ps, pi);
  EXPECT_NEAR(*t.r_error_total, *u.r_error_total, 1e-12);
  EXPECT_NEAR(*t.r_image_aleatoric, *u.r_image_aleatoric, 1e-12);
  EXPECT_NEAR(*t.r_shape_epistemic, *u.r_shape_epistemic, 1e-12);

  // Recompute from the exported CSV with a plain two-column correlation.
  std::istringstream csv(t.to_csv());
  std::string line;
  std::getline(csv, line);
  std::vector<double> err, tot;
  while (std::getline(csv, line)) {
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) f.push_back(c);
    ASSERT_EQ(f.size(), 11u);
    err.push_back(std::stod(f[3]));
    tot.push_back(std::stod(f[8]));
  }
  const double me = mean(err), mt = mean(tot);
  double a = 0, b = 0, c = 0;
  for (std::size_t i = 0; i < err.size(); ++i) {
    a += (err[i] - me) * (tot[i] - mt);
    b += (err[i] - me) * (err[i] - me);
    c += (tot[i] - mt) * (tot[i] - mt);
  }
  EXPECT_NEAR(*t.r_error_total, a / std::sqrt(b * c), 1e-6);
  const Json j = t.correlations_json();
  EXPECT_TRUE(j.contains("error_vs_total"));
}

TEST(Calibration, DuplicateIds) {
  auto inputs = calibration_inputs(3, 5);
  inputs[3].id = 1;
  Eigen::MatrixXd shapes(5, 6), images(5, 4);
  for (int i = 0; i < 5; ++i) shapes.row(i) = inputs[i].truth, images.row(i) = inputs[i].image;
  EXPECT_THROW(build_calibration_table(inputs, fit_pca(shapes), fit_pca(images)), DomainError);
}

TEST(Stats, MedianQuantile) {
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_EQ(quantile({0, 10}, 0.25), 2.5);
  EXPECT_NEAR(stddev({1, 2, 3, 4}), std::sqrt(5.0 / 3.0), 1e-15);
}
