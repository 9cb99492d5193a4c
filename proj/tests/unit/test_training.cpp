#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "bvib/model/checkpoint.hpp"
#include "bvib/shapegen/dataset.hpp"
#include "bvib/training/train.hpp"

using namespace bvib;
using namespace bvib::training;

namespace {

shapegen::DatasetConfig tiny_data() {
  shapegen::DatasetConfig d;
  d.shape.dims = {12, 12, 12};
  d.shape.n_points = 8;
  d.shape.n_theta = 24;
  d.shape.n_phi = 12;
  d.seed = 21;
  return d;
}

std::vector<Example> examples(int first, int n) {
  const auto d = tiny_data();
  std::vector<Example> out;
  for (int i = first; i < first + n; ++i) {
    const auto s = shapegen::generate_sample(d, i);
    out.push_back({i, s.blur, s.image, s.shape.points.flat()});
  }
  return out;
}

model::ModelConfig tiny_model(model::Variant v = model::Variant::VIB) {
  model::ModelConfig c;
  c.input_dims = {12, 12, 12};
  c.latent_dim = 4;
  c.n_points = 8;
  c.conv_channels = {4, 8};
  c.encoder_fc = {16};
  c.decoder_fc = {32, 32};
  c.variant = v;
  c.ensemble_size = 2;
  return c;
}

TrainConfig tiny_train(int epochs) {
  TrainConfig t;
  t.lr = 3e-3;
  t.batch_size = 4;
  t.max_epochs = epochs;
  t.patience = epochs;
  t.seed = 5;
  t.loss.burnin_start = 0;
  t.loss.burnin_end = 2;
  t.loss.dropout_burnin_end = 2;
  return t;
}

template <typename S>
std::vector<nn::Mat<S>> params(const model::VibNetwork<S>& n) {
  std::vector<nn::Mat<S>> out;
  n.for_each_param([&](const nn::Param<S>& p) { out.push_back(p.value); });
  return out;
}

}  // namespace

TEST(Routing, RoundRobin) {
  EXPECT_EQ(be_batch_routing(6, 4), (std::vector<int>{0, 1, 2, 3, 0, 1}));
  EXPECT_EQ(be_batch_routing(3, 4), (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(be_inference_routing(3), (std::vector<int>{0, 1, 2}));
  EXPECT_THROW(be_batch_routing(0, 4), DomainError);
  for (int b = 1; b < 20; ++b)
    for (int k = 1; k < 6; ++k) {
      std::vector<int> count(k, 0);
      for (int m : be_batch_routing(b, k)) ++count[m];
      EXPECT_LE(*std::max_element(count.begin(), count.end()) - *std::min_element(count.begin(), count.end()), 1);
    }
}

TEST(Normalization, Statistics) {
  const auto ex = examples(0, 5);
  const auto n = fit_normalization(ex);
  double dev = 0.0;
  for (const auto& e : ex) dev += (e.target - n.target_mean).squaredNorm();
  EXPECT_NEAR(n.target_scale, std::sqrt(dev / (5.0 * 24.0)), 1e-12);
  EXPECT_GT(n.input_std, 0.0);
}

TEST(BurnIn, GradientEqualsL2Gradient) {
  model::VibNetwork<double> net(tiny_model(), 2);
  const auto ex = examples(0, 3);
  std::vector<const shapegen::Volume*> vols;
  std::vector<Eigen::VectorXd> ys;
  for (const auto& e : ex) vols.push_back(&e.image), ys.push_back(e.target);
  const auto n = fit_normalization(ex);
  net.set_input_normalization(n.input_mean, n.input_std);
  net.set_target_normalization(n.target_mean, n.target_scale);
  const auto x = net.prepare_input(vols);
  const auto y = net.normalize_targets(ys);
  Rng rng = make_rng(3);
  nn::Mat<double> eps(4, 3);
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = standard_normal(rng);
  StepOptions<double> opt;
  opt.alpha = 0.0;
  opt.beta = 0.3;
  opt.mode = nn::Mode::Eval;
  loss_and_grad(net, x, y, {}, eps, opt, true);

  // Central differences of the plain squared error, independent of the loss blend.
  auto l2 = [&]() {
    nn::PassSpec<double> p;
    const auto e = net.encode(x, p);
    const nn::Mat<double> z = e.mu + (e.log_var.array() * 0.5).exp().matrix().cwiseProduct(eps);
    return (net.decode(z, p).y_hat - y).squaredNorm() / double(y.size());
  };
  int checked = 0;
  net.for_each_param([&](nn::Param<double>& p) {
    for (Eigen::Index i = 0; i < p.value.size(); i += std::max<Eigen::Index>(1, p.value.size() / 3)) {
      const double v = p.value.data()[i], h = 1e-6;
      p.value.data()[i] = v + h;
      const double up = l2();
      p.value.data()[i] = v - h;
      const double dn = l2();
      p.value.data()[i] = v;
      EXPECT_NEAR(p.grad.data()[i], (up - dn) / (2 * h), 1e-6 + 1e-4 * std::abs(p.grad.data()[i])) << p.name;
      ++checked;
    }
  });
  EXPECT_GT(checked, 20);
}

TEST(Train, TwoSampleOverfit) {
  const auto ex = examples(0, 2);
  auto cfg = tiny_train(500);
  cfg.batch_size = 2;
  Net init(tiny_model(), cfg.seed);
  const auto n = fit_normalization(ex);
  init.set_input_normalization(n.input_mean, n.input_std);
  init.set_target_normalization(n.target_mean, n.target_scale);
  // The untrained decoder outputs near zero, i.e. predicts the mean shape.
  const double initial = mean_rmse(predict_means(init, ex), ex);
  const auto r = train(tiny_model(), ex, ex, cfg);
  const double final_rmse = mean_rmse(predict_means(r.best, ex), ex);
  EXPECT_LT(final_rmse, 0.05 * initial) << "initial " << initial;
}

TEST(Train, SameSeedIsDeterministic) {
  const auto tr = examples(0, 8), va = examples(8, 3);
  const auto a = train(tiny_model(model::Variant::CD), tr, va, tiny_train(4));
  const auto b = train(tiny_model(model::Variant::CD), tr, va, tiny_train(4));
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].val_rmse, b.history[i].val_rmse);
    EXPECT_EQ(a.history[i].train.total, b.history[i].train.total);
  }
  EXPECT_EQ(params(a.best), params(b.best));
  auto other = tiny_train(4);
  other.seed = 6;
  const auto c = train(tiny_model(model::Variant::CD), tr, va, other);
  EXPECT_NE(params(a.best), params(c.best));
}

TEST(Train, BestCheckpointHasMinimumEligibleValidationRmse) {
  const auto tr = examples(0, 8), va = examples(8, 3);
  auto cfg = tiny_train(12);
  cfg.patience = 3;
  const auto r = train(tiny_model(), tr, va, cfg);
  double best = 1e300;
  for (const auto& h : r.history)
    if (h.epoch >= cfg.loss.burnin_end) best = std::min(best, h.val_rmse);
  EXPECT_EQ(r.best_val_rmse, best);
  EXPECT_EQ(r.history[static_cast<std::size_t>(r.best_epoch)].val_rmse, best);
  EXPECT_GE(r.best_epoch, cfg.loss.burnin_end);
  EXPECT_NEAR(mean_rmse(predict_means(r.best, va), va), best, 1e-9);
  if (r.stop_reason == "patience") EXPECT_EQ(r.epochs_run - 1 - r.best_epoch, cfg.patience);
}

TEST(Train, DropRatesFrozenDuringDropoutBurnIn) {
  const auto tr = examples(0, 6), va = examples(6, 2);
  auto cfg = tiny_train(5);
  cfg.loss.dropout_burnin_end = 3;
  const auto r = train(tiny_model(model::Variant::CD), tr, va, cfg);
  const Net fresh(tiny_model(model::Variant::CD), cfg.seed);
  for (int e = 0; e < 3; ++e) {
    EXPECT_FALSE(r.history[e].dropout_active);
    EXPECT_EQ(r.history[e].drop_probabilities, fresh.drop_probabilities());
  }
  EXPECT_TRUE(r.history[3].dropout_active);
  EXPECT_NE(r.history[4].drop_probabilities, fresh.drop_probabilities());
}

TEST(Train, NaiveEnsembleMembersDiffer) {
  const auto tr = examples(0, 6), va = examples(6, 2);
  const auto rs = train_naive_ensemble(tiny_model(model::Variant::NE), tr, va, tiny_train(3), 2);
  ASSERT_EQ(rs.size(), 2u);
  EXPECT_NE(params(rs[0].best), params(rs[1].best));
  EXPECT_THROW(train_naive_ensemble(tiny_model(model::Variant::NE), tr, va, tiny_train(3), 1), DomainError);
}

TEST(Train, LossCsvHasTwoRowsPerEpoch) {
  const auto tr = examples(0, 4), va = examples(4, 2);
  const auto r = train(tiny_model(model::Variant::BE), tr, va, tiny_train(3));
  const std::string csv = loss_csv(r.history);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 3);
  for (const auto& h : r.history) EXPECT_TRUE(std::isfinite(h.train.total));
}

TEST(Checkpoint, RoundTrip) {
  const auto tr = examples(0, 4), va = examples(4, 2);
  auto cfg = tiny_train(3);
  nn::AdamConfig ac;
  model::VibNetwork<float> net(tiny_model(model::Variant::BE_CD), 7);
  const auto n = fit_normalization(tr);
  net.set_input_normalization(n.input_mean, n.input_std);
  net.set_target_normalization(n.target_mean, n.target_scale);
  net.set_dataset_size(4);
  nn::Adam<float> adam(ac);
  std::vector<const shapegen::Volume*> vols;
  std::vector<Eigen::VectorXd> ys;
  for (const auto& e : tr) vols.push_back(&e.image), ys.push_back(e.target);
  Rng rng = make_rng(1);
  StepOptions<float> opt;
  opt.dropout = nn::DropoutMode::Sample;
  opt.rng = &rng;
  for (int s = 0; s < 2; ++s) {
    model::Tape<float> tape;
    loss_and_grad(net, net.prepare_input(vols), net.normalize_targets(ys), be_batch_routing(4, 2),
                  nn::Mat<float>(nn::Mat<float>::Zero(4, 4)), opt, true, &tape);
    adam.step(net);
    net.update_running_stats(tape);
  }

  const auto path = (std::filesystem::temp_directory_path() / "bvib_test_ckpt.bin").string();
  model::save_checkpoint(path, net, 11, 7, Json{{"note", "x"}}, &adam);
  const auto ck = model::load_checkpoint<float>(path);
  EXPECT_EQ(ck.epoch, 11);
  EXPECT_EQ(ck.seed, 7u);
  EXPECT_EQ(ck.metadata.at("note"), "x");
  EXPECT_EQ(params(ck.net), params(net));
  EXPECT_EQ(ck.net.drop_probabilities(), net.drop_probabilities());
  ASSERT_TRUE(ck.optimizer.has_value());
  EXPECT_EQ(ck.optimizer->steps, adam.state().steps);
  EXPECT_EQ(ck.optimizer->m, adam.state().m);
  EXPECT_EQ(ck.optimizer->v, adam.state().v);
  for (int m = 0; m < 2; ++m) {
    Rng r1 = make_rng(2), r2 = make_rng(2);
    const auto a = net.forward(tr[0].image, 1, r1, model::RunMode::Eval, true, m);
    const auto b = ck.net.forward(tr[0].image, 1, r2, model::RunMode::Eval, true, m);
    EXPECT_EQ(a[0].y_hat, b[0].y_hat);
    EXPECT_EQ(a[0].log_var_y, b[0].log_var_y);
  }
  EXPECT_THROW(model::load_checkpoint<double>(path), IoError);

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 16);
  EXPECT_THROW(model::load_checkpoint<float>(path), IoError);
  std::filesystem::remove(path);
  EXPECT_THROW(model::load_checkpoint<float>(path), IoError);
}
