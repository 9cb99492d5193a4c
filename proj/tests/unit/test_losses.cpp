#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "bvib/objectives/losses.hpp"

using namespace bvib;
using namespace bvib::objectives;

namespace {
Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}
}  // namespace

TEST(GaussianNll, SimpleValues) {
  const Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(6, -1, 1);
  EXPECT_DOUBLE_EQ(gaussian_nll(y, y, Eigen::VectorXd::Zero(6)), 0.0);
  EXPECT_DOUBLE_EQ(gaussian_nll(y, y.array() + 1.0, Eigen::VectorXd::Zero(6)), 0.5);
}

TEST(GaussianNll, MatchesScalarOracle) {
  EXPECT_NEAR(gaussian_nll(vec({0.3, -1.1, 2.0}), vec({0.1, -0.5, 1.4}), vec({0.2, -0.7, 1.3})),
              0.275968608384122559875945856759, 1e-15);
  EXPECT_THROW(gaussian_nll(vec({1, 2}), vec({1}), vec({0, 0})), ShapeError);
}

TEST(L2Loss, Values) {
  const Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(5, 0, 3);
  EXPECT_DOUBLE_EQ(l2_loss(y, y), 0.0);
  EXPECT_DOUBLE_EQ(l2_loss(y, y.array() - 1.0), 1.0);
  EXPECT_NEAR(l2_loss(vec({0.3, -1.1, 2.0}), vec({0.1, -0.5, 1.4})), 0.253333333333333333333333333333, 1e-15);
}

TEST(KlStdNormal, Values) {
  EXPECT_DOUBLE_EQ(kl_gauss_std_normal(Eigen::VectorXd::Zero(4), Eigen::VectorXd::Zero(4)), 0.0);
  EXPECT_DOUBLE_EQ(kl_gauss_std_normal(vec({1.0}), vec({0.0})), 0.5);
  EXPECT_NEAR(kl_gauss_std_normal(vec({0.4, -1.5}), vec({-0.3, 0.8})), 1.43817957458709273532320565536, 1e-14);
}

TEST(KlStdNormal, MatchesMonteCarlo) {
  Rng rng = make_rng(8);
  Eigen::VectorXd mu(8), lv(8);
  for (int i = 0; i < 8; ++i) {
    mu(i) = 0.8 * standard_normal(rng);
    lv(i) = 0.6 * standard_normal(rng);
  }
  // E_q[log q(z) - log p(z)] with z ~ q.
  const int n = 1000000;
  double acc = 0.0;
  for (int s = 0; s < n; ++s) {
    double term = 0.0;
    for (int i = 0; i < 8; ++i) {
      const double eps = standard_normal(rng);
      const double z = mu(i) + std::exp(0.5 * lv(i)) * eps;
      term += -0.5 * lv(i) - 0.5 * eps * eps + 0.5 * z * z;
    }
    acc += term;
  }
  const double kl = kl_gauss_std_normal(mu, lv);
  EXPECT_NEAR(acc / n, kl, 0.01 * kl);
}

TEST(KlStdNormal, NonNegativeAndZeroOnlyAtOrigin) {
  Rng rng = make_rng(9);
  for (int trial = 0; trial < 500; ++trial) {
    Eigen::VectorXd mu(5), lv(5);
    for (int i = 0; i < 5; ++i) {
      mu(i) = 3.0 * standard_normal(rng);
      lv(i) = 3.0 * standard_normal(rng);
    }
    EXPECT_GT(kl_gauss_std_normal(mu, lv), 0.0);
  }
  EXPECT_EQ(kl_gauss_std_normal(Eigen::VectorXd::Zero(5), Eigen::VectorXd::Zero(5)), 0.0);
}

TEST(BurnIn, Schedule) {
  LossConfig c;
  c.burnin_start = 10;
  c.burnin_end = 20;
  EXPECT_EQ(burnin_alpha(0, c), 0.0);
  EXPECT_EQ(burnin_alpha(10, c), 0.0);
  EXPECT_DOUBLE_EQ(burnin_alpha(15, c), 0.5);
  EXPECT_EQ(burnin_alpha(20, c), 1.0);
  EXPECT_EQ(burnin_alpha(500, c), 1.0);
  c.burnin_start = c.burnin_end = 5;
  EXPECT_EQ(burnin_alpha(4, c), 0.0);
  EXPECT_EQ(burnin_alpha(5, c), 1.0);
  EXPECT_THROW(burnin_alpha(-1, c), DomainError);
}

TEST(LossConfig, Validation) {
  LossConfig c;
  EXPECT_DOUBLE_EQ(c.beta, 0.01);
  c.beta = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = LossConfig{};
  c.burnin_start = 31;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(LossConfig::from_json(Json{{"betta", 0.1}}), ConfigError);
  EXPECT_EQ(LossConfig::from_json(LossConfig{}.to_json()).to_json(), LossConfig{}.to_json());
}

namespace {
struct Case {
  Eigen::VectorXd y;
  std::vector<model::PredictiveSample> samples;
  model::LatentDist latent;
};

Case random_case(std::uint64_t seed, int d = 9, int l = 3, int n_samples = 2) {
  Rng rng = make_rng(seed);
  auto rnd = [&](int n, double scale) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = scale * standard_normal(rng);
    return v;
  };
  Case c;
  c.y = rnd(d, 1.0);
  for (int s = 0; s < n_samples; ++s) c.samples.push_back({rnd(d, 1.0), rnd(d, 0.5)});
  c.latent = {rnd(l, 1.0), rnd(l, 0.5)};
  return c;
}
}  // namespace

TEST(VibLoss, Composition) {
  const Case c = random_case(4);
  const auto b = vib_loss(c.y, c.samples, c.latent, 0.3, 1.0);
  double nll = 0.0;
  for (const auto& s : c.samples) nll += gaussian_nll(c.y, s.y_hat, s.log_var_y);
  nll /= 2.0;
  const double kl = kl_gauss_std_normal(c.latent.mu, c.latent.log_var);
  EXPECT_NEAR(b.total, nll + 0.3 * kl, 1e-14);
  EXPECT_EQ(b.weight_kl, 0.0);
  EXPECT_NEAR(vib_loss(c.y, c.samples, c.latent, 0.0, 1.0).total, nll, 1e-14);
}

TEST(VibLoss, StandardNormalLatentAddsNothing) {
  Case c = random_case(5);
  c.latent = {Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3)};
  const auto b = vib_loss(c.y, c.samples, c.latent, 0.7, 1.0);
  EXPECT_EQ(b.latent_kl, 0.0);
  EXPECT_DOUBLE_EQ(b.total, b.nll);
}

TEST(VibLoss, BlendingIdentityForAllAlpha) {
  for (int seed = 0; seed < 20; ++seed) {
    const Case c = random_case(100 + static_cast<std::uint64_t>(seed));
    const double alpha = seed / 19.0;
    const auto b = bvib_loss(c.y, c.samples, c.latent, 0.05, alpha, 0.125 * seed);
    EXPECT_EQ(b.total, (1 - alpha) * b.l2 + alpha * (b.nll + 0.05 * b.latent_kl) + b.weight_kl);
    EXPECT_EQ(b.burnin_alpha, alpha);
  }
}

TEST(VibLoss, MonotoneInBeta) {
  const Case c = random_case(6);
  double prev = -1e300;
  for (double beta : {0.0, 0.01, 0.1, 1.0, 10.0}) {
    const double t = vib_loss(c.y, c.samples, c.latent, beta, 0.8).total;
    EXPECT_GT(t, prev);
    prev = t;
  }
}

TEST(BvibLoss, ReducesToVibWithoutWeightKl) {
  const Case c = random_case(7);
  EXPECT_EQ(bvib_loss(c.y, c.samples, c.latent, 0.01, 0.6, 0.0).total, vib_loss(c.y, c.samples, c.latent, 0.01, 0.6).total);
}

TEST(BvibLoss, EntropyOnlyWeightKl) {
  const Case c = random_case(8);
  const auto reg = bayes::cd_layer_regularizer(0.0, 0.0, 16, 1e-3, 300);
  EXPECT_NEAR(reg.value, -(16.0 / 300.0) * std::log(2.0), 1e-16);
  const auto b = bvib_loss(c.y, c.samples, c.latent, 0.01, 1.0, reg.value);
  EXPECT_DOUBLE_EQ(b.total - vib_loss(c.y, c.samples, c.latent, 0.01, 1.0).total, reg.value);
}

TEST(BatchLoss, MatchesPerSampleMeanAndFiniteDifferences) {
  Rng rng = make_rng(10);
  const int d = 6, l = 3, n = 4;
  auto rnd = [&](int r, int c, double s) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = s * standard_normal(rng);
    return m;
  };
  Eigen::MatrixXd y = rnd(d, n, 1), yh = rnd(d, n, 1), lv = rnd(d, n, 0.5), mu = rnd(l, n, 1), lz = rnd(l, n, 0.5);
  const double beta = 0.2, alpha = 0.35;
  const auto bl = batch_loss<double>(y, yh, lv, mu, lz, beta, alpha);
  double ref = 0.0;
  for (int b = 0; b < n; ++b) {
    std::vector<model::PredictiveSample> s{{yh.col(b), lv.col(b)}};
    ref += vib_loss(y.col(b), s, {mu.col(b), lz.col(b)}, beta, alpha).total;
  }
  EXPECT_NEAR(bl.loss.total, ref / n, 1e-14);

  const double h = 1e-6;
  auto check = [&](Eigen::MatrixXd& m, const Eigen::MatrixXd& g) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double keep = m.data()[i];
      m.data()[i] = keep + h;
      const double up = batch_loss<double>(y, yh, lv, mu, lz, beta, alpha).loss.total;
      m.data()[i] = keep - h;
      const double dn = batch_loss<double>(y, yh, lv, mu, lz, beta, alpha).loss.total;
      m.data()[i] = keep;
      EXPECT_NEAR(g.data()[i], (up - dn) / (2 * h), 1e-8);
    }
  };
  check(yh, bl.d_y_hat);
  check(lv, bl.d_log_var_y);
  check(mu, bl.d_mu);
  check(lz, bl.d_log_var_z);
}
