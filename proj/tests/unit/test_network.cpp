#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "bvib/model/network.hpp"
#include "bvib/training/step.hpp"

using namespace bvib;
using namespace bvib::model;

namespace {

ModelConfig tiny_config(Variant v) {
  ModelConfig c;
  c.input_dims = {4, 4, 4};
  c.latent_dim = 2;
  c.n_points = 3;
  c.conv_channels = {2, 2};
  c.encoder_fc = {3};
  c.decoder_fc = {4};
  c.variant = v;
  c.ensemble_size = 2;
  c.init_drop_prob = 0.2;
  return c;
}

ModelConfig small_config(Variant v) {
  ModelConfig c;
  c.input_dims = {8, 8, 8};
  c.latent_dim = 4;
  c.n_points = 8;
  c.conv_channels = {3, 4, 5};
  c.encoder_fc = {6};
  c.decoder_fc = {10, 12};
  c.variant = v;
  c.ensemble_size = 3;
  return c;
}

shapegen::Volume random_volume(std::array<int, 3> dims, Rng& rng, double scale = 1.0) {
  shapegen::Volume v;
  v.dims = dims;
  v.data.resize(static_cast<std::size_t>(dims[0] * dims[1] * dims[2]));
  for (auto& x : v.data) x = static_cast<float>(scale * standard_normal(rng));
  return v;
}

template <typename S>
Mat<S> random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  Mat<S> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(scale * standard_normal(rng));
  return m;
}

std::vector<int> members_for(Variant v, int batch, int k) {
  std::vector<int> m;
  if (!uses_batch_ensemble(v)) return m;
  for (int b = 0; b < batch; ++b) m.push_back(b % k);
  return m;
}

}  // namespace

TEST(Network, OutputShapes) {
  VibNetwork<float> net(small_config(Variant::VIB), 1);
  Rng rng = make_rng(2);
  const auto x = random_volume({8, 8, 8}, rng);
  const auto q = net.encode(x, RunMode::Eval);
  EXPECT_EQ(q.mu.size(), 4);
  EXPECT_EQ(q.log_var.size(), 4);
  const auto p = net.decode(q.mu, RunMode::Eval);
  EXPECT_EQ(p.y_hat.size(), 24);
  EXPECT_EQ(p.log_var_y.size(), 24);
  EXPECT_THROW(net.decode(Eigen::VectorXd::Zero(3), RunMode::Eval), ShapeError);
  EXPECT_THROW(net.encode(random_volume({8, 8, 4}, rng), RunMode::Eval), ShapeError);
}

TEST(Network, DeterministicForFixedSeeds) {
  for (Variant v : {Variant::VIB, Variant::CD, Variant::BE_CD}) {
    VibNetwork<float> a(small_config(v), 7), b(small_config(v), 7);
    Rng rng = make_rng(3);
    const auto x = random_volume({8, 8, 8}, rng);
    std::optional<int> member;
    if (uses_batch_ensemble(v)) member = 1;
    Rng r1 = make_rng(5), r2 = make_rng(5);
    const auto qa = a.encode(x, RunMode::MonteCarlo, member, &r1);
    const auto qb = b.encode(x, RunMode::MonteCarlo, member, &r2);
    EXPECT_EQ(qa.mu, qb.mu);
    EXPECT_EQ(qa.log_var, qb.log_var);
    const auto pa = a.decode(qa.mu, RunMode::MonteCarlo, member, &r1);
    const auto pb = b.decode(qb.mu, RunMode::MonteCarlo, member, &r2);
    EXPECT_EQ(pa.y_hat, pb.y_hat);
  }
}

TEST(Network, MemberIndexRequiredOnlyForBatchEnsembles) {
  Rng rng = make_rng(4);
  const auto x = random_volume({8, 8, 8}, rng);
  VibNetwork<float> be(small_config(Variant::BE), 1);
  EXPECT_THROW(be.encode(x, RunMode::Eval), DomainError);
  EXPECT_THROW(be.encode(x, RunMode::Eval, 3), DomainError);
  EXPECT_NO_THROW(be.encode(x, RunMode::Eval, 2));
  VibNetwork<float> vib(small_config(Variant::VIB), 1);
  EXPECT_THROW(vib.encode(x, RunMode::Eval, 0), DomainError);
  VibNetwork<float> cd(small_config(Variant::CD), 1);
  EXPECT_THROW(cd.encode(x, RunMode::MonteCarlo), DomainError);  // no rng
}

TEST(Network, BatchEnsembleUnitFastWeightsMatchSharedNetwork) {
  VibNetwork<double> be(small_config(Variant::BE), 9);
  VibNetwork<double> single(small_config(Variant::VIB), 10);
  std::map<std::string, Mat<double>> shared;
  be.for_each_param([&](nn::Param<double>& p) {
    if (p.name.find(".fast_") != std::string::npos)
      p.value.setOnes();
    else
      shared[p.name] = p.value;
  });
  single.for_each_param([&](nn::Param<double>& p) { p.value = shared.at(p.name); });
  Rng rng = make_rng(1);
  const auto x = random_volume({8, 8, 8}, rng);
  const auto ref = single.encode(x, RunMode::Eval);
  const auto dec = single.decode(ref.mu, RunMode::Eval);
  for (int k = 0; k < 3; ++k) {
    const auto q = be.encode(x, RunMode::Eval, k);
    EXPECT_LT((q.mu - ref.mu).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((q.log_var - ref.log_var).cwiseAbs().maxCoeff(), 1e-12);
    const auto p = be.decode(ref.mu, RunMode::Eval, k);
    EXPECT_LT((p.y_hat - dec.y_hat).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((p.log_var_y - dec.log_var_y).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Network, BatchEnsembleParameterCount) {
  const ModelConfig cfg = small_config(Variant::BE);
  VibNetwork<float> be(cfg, 1);
  VibNetwork<float> single(small_config(Variant::VIB), 1);
  Eigen::Index rank1 = 0;
  for (const auto* blocks : {&be.encoder_blocks(), &be.decoder_blocks()})
    for (const auto& b : *blocks) rank1 += b.spec().in_units + b.spec().out_units;
  EXPECT_EQ(be.parameter_count(), single.parameter_count() + cfg.ensemble_size * rank1);
  EXPECT_EQ(be.shared_parameter_count(), single.parameter_count());
  // conv 1->3, 3->4, 4->5 (27-tap kernels with bias and batch norm), fc 5->6, head 6->8,
  // decoder 4->10->12->48 with one PReLU slope per hidden layer.
  const Eigen::Index expected = (27 * 1 * 3 + 3 * 3) + (27 * 3 * 4 + 3 * 4) + (27 * 4 * 5 + 3 * 5) + (5 * 6 + 6) +
                                (6 * 8 + 8) + (4 * 10 + 10 + 1) + (10 * 12 + 12 + 1) + (12 * 48 + 48);
  EXPECT_EQ(single.parameter_count(), expected);
  EXPECT_EQ(rank1, (1 + 3) + (3 + 4) + (4 + 5) + (5 + 6) + (6 + 8) + (4 + 10) + (10 + 12) + (12 + 48));
}

TEST(Network, OutputsFiniteForExtremeInputs) {
  for (Variant v : {Variant::VIB, Variant::CD, Variant::BE}) {
    VibNetwork<float> net(small_config(v), 3);
    Rng rng = make_rng(6);
    const auto x = random_volume({8, 8, 8}, rng, 1e6);
    std::optional<int> member;
    if (uses_batch_ensemble(v)) member = 0;
    const auto q = net.encode(x, RunMode::MonteCarlo, member, &rng);
    ASSERT_TRUE(q.mu.allFinite());
    EXPECT_GE(q.log_var.minCoeff(), kLogVarMin);
    EXPECT_LE(q.log_var.maxCoeff(), kLogVarMax);
    const auto p = net.decode(Eigen::VectorXd::Constant(4, 1e6), RunMode::MonteCarlo, member, &rng);
    ASSERT_TRUE(p.y_hat.allFinite());
    EXPECT_GE(p.log_var_y.minCoeff(), kLogVarMin);
    EXPECT_LE(p.log_var_y.maxCoeff(), kLogVarMax);
  }
}

TEST(Network, ForwardSampleCounts) {
  VibNetwork<float> net(small_config(Variant::VIB), 2);
  Rng rng = make_rng(7);
  const auto x = random_volume({8, 8, 8}, rng);
  EXPECT_EQ(net.forward(x, 5, rng).size(), 5u);
  const auto a = net.forward(x, 1, rng, RunMode::Eval, true);
  const auto b = net.forward(x, 1, rng, RunMode::Eval, true);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].y_hat, b[0].y_hat);
  EXPECT_EQ(a[0].y_hat, net.decode(net.encode(x, RunMode::Eval).mu, RunMode::Eval).y_hat);
  EXPECT_THROW(net.forward(x, 0, rng), DomainError);
}

TEST(Network, LatentSpreadGrowsWithLogVariance) {
  ModelConfig cfg = small_config(Variant::VIB);
  VibNetwork<double> net(cfg, 12);
  const LatentDist base{Eigen::VectorXd::Constant(4, 0.3), Eigen::VectorXd::Constant(4, -2.0)};
  double prev = 0.0;
  for (double shift : {0.0, 1.0, 2.0, 3.0}) {
    LatentDist q = base;
    q.log_var.array() += shift;
    Rng rng = make_rng(44);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(cfg.output_dim()), sq = sum;
    const int n = 2000;
    for (int i = 0; i < n; ++i) {
      const auto y = net.decode(reparameterize(q, rng), RunMode::Eval).y_hat;
      sum += y;
      sq += y.cwiseProduct(y);
    }
    const double spread = (sq / n - (sum / n).cwiseProduct(sum / n)).sum();
    EXPECT_GT(spread, prev);
    prev = spread;
  }
}

TEST(Reparameterize, ClampFloorGivesMean) {
  Rng rng = make_rng(1);
  const LatentDist q{Eigen::VectorXd::LinSpaced(5, -1, 1), Eigen::VectorXd::Constant(5, kLogVarMin)};
  EXPECT_LT((reparameterize(q, rng) - q.mu).cwiseAbs().maxCoeff(), std::exp(-10.0) * 6.0);
}

TEST(Reparameterize, MomentsMatch) {
  Rng rng = make_rng(2);
  const LatentDist q{Eigen::Vector2d(0.7, -1.3), Eigen::Vector2d(-0.5, 0.9)};
  const int n = 100000;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(2), sq = sum;
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd z = reparameterize(q, rng);
    sum += z;
    sq += z.cwiseProduct(z);
  }
  for (int i = 0; i < 2; ++i) {
    const double mean = sum(i) / n;
    const double var = sq(i) / n - mean * mean;
    EXPECT_NEAR(mean, q.mu(i), 4.0 * std::exp(0.5 * q.log_var(i)) / std::sqrt(double(n)));
    EXPECT_NEAR(var / std::exp(q.log_var(i)), 1.0, 0.05);
  }
}

TEST(Network, InputGradientFiniteAndNonzero) {
  VibNetwork<double> net(small_config(Variant::VIB), 5);
  Rng rng = make_rng(8);
  const auto v0 = random_volume({8, 8, 8}, rng), v1 = random_volume({8, 8, 8}, rng);
  const shapegen::Volume* vols[] = {&v0, &v1};
  const Mat<double> x = net.prepare_input(vols);
  nn::PassSpec<double> pass;
  pass.mode = nn::Mode::Train;
  Tape<double> tape;
  const auto e = net.encode(x, pass, &tape);
  const auto d = net.decode(e.mu, pass, &tape);
  const Mat<double> dz = net.backward_decode(tape, Mat<double>::Ones(d.y_hat.rows(), 2), Mat<double>::Zero(d.y_hat.rows(), 2));
  const Mat<double> dx = net.backward_encode(tape, dz, Mat<double>::Zero(4, 2));
  ASSERT_EQ(dx.rows(), 1);
  ASSERT_EQ(dx.cols(), x.cols());
  EXPECT_TRUE(dx.allFinite());
  EXPECT_GT(dx.cwiseAbs().maxCoeff(), 0.0);

  // Directional finite difference of sum(y_hat) along a random input direction.
  const Mat<double> dir = random_mat<double>(1, x.cols(), rng);
  const double h = 1e-6;
  auto f = [&](const Mat<double>& xx) { return net.decode(net.encode(xx, pass).mu, pass).y_hat.sum(); };
  const double fd = (f(x + h * dir) - f(x - h * dir)) / (2 * h);
  EXPECT_NEAR((dx.cwiseProduct(dir)).sum(), fd, 1e-5 * std::max(1.0, std::abs(fd)));
}

class GradientCheck : public ::testing::TestWithParam<Variant> {};

TEST_P(GradientCheck, AnalyticMatchesCentralDifferences) {
  const Variant v = GetParam();
  ModelConfig cfg = tiny_config(v);
  cfg.length_scale = 0.5;
  VibNetwork<double> net(cfg, 17);
  net.set_dataset_size(5);
  Rng rng = make_rng(99);
  const int batch = 3;
  const Mat<double> x = random_mat<double>(1, batch * 64, rng);
  const Mat<double> y = random_mat<double>(cfg.output_dim(), batch, rng);
  const Mat<double> eps = random_mat<double>(cfg.latent_dim, batch, rng);
  const std::vector<int> members = members_for(v, batch, cfg.ensemble_size);
  // Perturb the non-weight parameters away from their symmetric initial values.
  net.for_each_param([&](nn::Param<double>& p) {
    if (p.name.find(".weight") == std::string::npos) p.value += random_mat<double>(p.value.rows(), p.value.cols(), rng, 0.2);
  });

  training::StepOptions<double> opt;
  opt.alpha = 0.6;
  opt.beta = 0.3;
  opt.dropout = nn::DropoutMode::Sample;
  auto loss = [&](bool grad) {
    Rng gate_rng = make_rng(123);
    opt.rng = &gate_rng;
    return training::loss_and_grad(net, x, y, members, eps, opt, grad).total;
  };
  loss(true);
  std::vector<std::pair<std::string, Mat<double>>> analytic;
  net.for_each_param([&](nn::Param<double>& p) { analytic.emplace_back(p.name, p.grad); });

  const double h = 1e-6;
  std::size_t idx = 0;
  std::vector<nn::Param<double>*> params;
  net.for_each_param([&](nn::Param<double>& p) { params.push_back(&p); });
  for (nn::Param<double>* p : params) {
    Mat<double> numeric(p->value.rows(), p->value.cols());
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double keep = p->value.data()[i];
      p->value.data()[i] = keep + h;
      const double up = loss(false);
      p->value.data()[i] = keep - h;
      const double dn = loss(false);
      p->value.data()[i] = keep;
      numeric.data()[i] = (up - dn) / (2 * h);
    }
    const Mat<double>& a = analytic[idx++].second;
    const double scale = std::max(a.norm(), numeric.norm());
    EXPECT_LE((a - numeric).norm(), 1e-4 * scale + 1e-9) << p->name << "\nanalytic\n" << a << "\nnumeric\n" << numeric;
  }
}

INSTANTIATE_TEST_SUITE_P(AllVariants, GradientCheck,
                         ::testing::Values(Variant::VIB, Variant::CD, Variant::BE, Variant::BE_CD),
                         [](const auto& info) {
                           std::string s = to_string(info.param);
                           for (auto& c : s)
                             if (c == '-') c = '_';
                           return s;
                         });
