// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "coretune/model.hpp"
#include "coretune/oracle.hpp"

using namespace coretune;

namespace {

Dataset random_dataset(long n, long d, int c, std::uint64_t seed) {
  Dataset ds;
  Rng rng(seed);
  ds.features.resize(n, d);
  for (long i = 0; i < n; ++i) {
    for (long j = 0; j < d; ++j) ds.features(i, j) = rng.normal();
  }
  ds.labels.resize(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) ds.labels[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_int(0, c - 1));
  ds.n_classes = c;
  return ds;
}

std::vector<int> all_rows(const Dataset& ds) {
  std::vector<int> idx(static_cast<std::size_t>(ds.n()));
  for (long i = 0; i < ds.n(); ++i) idx[static_cast<std::size_t>(i)] = static_cast<int>(i);
  return idx;
}

bool models_identical(const MlpModel& a, const MlpModel& b) {
  if (a.layer_dims != b.layer_dims) return false;
  for (int l = 0; l < a.n_layers(); ++l) {
    if (a.weights[static_cast<std::size_t>(l)] != b.weights[static_cast<std::size_t>(l)]) return false;
    if (a.biases[static_cast<std::size_t>(l)] != b.biases[static_cast<std::size_t>(l)]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("init_mlp is deterministic and shape-correct") {
  const MlpModel a = init_mlp({4, 8, 8, 3}, 7);
  const MlpModel b = init_mlp({4, 8, 8, 3}, 7);
  CHECK(models_identical(a, b));
  const MlpModel c = init_mlp({4, 8, 8, 3}, 8);
  CHECK_FALSE(models_identical(a, c));
  for (int l = 0; l < a.n_layers(); ++l) {
    CHECK(a.biases[static_cast<std::size_t>(l)].cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("init_mlp parameter count matches shape arithmetic") {
  const MlpModel m = init_mlp({180, 200, 200, 3}, 1);
  // 180*200+200 + 200*200+200 + 200*3+3
  CHECK(m.parameter_count() == 77003);
}

TEST_CASE("init_mlp rejects bad dimensions") {
  CHECK_THROWS_AS(init_mlp({}, 1), ConfigError);
  CHECK_THROWS_AS(init_mlp({5}, 1), ConfigError);
  CHECK_THROWS_AS(init_mlp({5, 0, 2}, 1), ConfigError);
}

TEST_CASE("zeroed final layer gives uniform softmax loss ln C") {
  for (const int c : {2, 3, 5}) {
    MlpModel m = init_mlp({4, 6, 6, c}, 3);
    m.weights.back().setZero();
    m.biases.back().setZero();
    const Dataset ds = random_dataset(20, 4, c, 11);
    Gradients g;
    const std::vector<double> ones(20, 1.0);
    const LossReport rep = loss_and_grad(m, ds, all_rows(ds), ones, g);
    CHECK(rep.mean_loss == doctest::Approx(std::log(static_cast<double>(c))).epsilon(1e-12));
  }
}

TEST_CASE("unit weights reproduce the unweighted mean loss and gradient") {
  const MlpModel m = init_mlp({5, 7, 3}, 21);
  const Dataset ds = random_dataset(16, 5, 3, 22);
  const auto idx = all_rows(ds);
  Gradients g1, g2;
  const std::vector<double> ones(16, 1.0);
  const std::vector<double> twos(16, 2.0);  // any constant weight cancels
  const LossReport a = loss_and_grad(m, ds, idx, ones, g1);
  const LossReport b = loss_and_grad(m, ds, idx, twos, g2);
  CHECK(a.mean_loss == doctest::Approx(b.mean_loss).epsilon(1e-14));
  for (int l = 0; l < m.n_layers(); ++l) {
    CHECK((g1.weights[static_cast<std::size_t>(l)] - g2.weights[static_cast<std::size_t>(l)]).cwiseAbs().maxCoeff() <
          1e-14);
  }
}

TEST_CASE("loss_and_grad validates weights") {
  const MlpModel m = init_mlp({3, 4, 2}, 1);
  const Dataset ds = random_dataset(4, 3, 2, 2);
  Gradients g;
  std::vector<double> short_w(3, 1.0);
  CHECK_THROWS_AS(loss_and_grad(m, ds, all_rows(ds), short_w, g), ConfigError);
  std::vector<double> negative(4, 1.0);
  negative[2] = -0.5;
  CHECK_THROWS_AS(loss_and_grad(m, ds, all_rows(ds), negative, g), ConfigError);
  std::vector<double> zeros(4, 0.0);
  CHECK_THROWS_AS(loss_and_grad(m, ds, all_rows(ds), zeros, g), ConfigError);
}

TEST_CASE("analytic gradient matches central finite differences") {
  const MlpModel m = init_mlp({3, 4, 2}, 5);
  Rng rng(91);
  // A fixed well-behaved batch; the fuzzed sweep lives in the oracle suite.
  Dataset ds = random_dataset(5, 3, 2, 17);
  const std::vector<double> w{0.5, 1.0, 2.0, 0.25, 1.5};
  const double err = oracle::gradient_relative_error(m, ds, all_rows(ds), w, 1e-4);
  CHECK(err < 1e-4);
}

TEST_CASE("weighted loss is linear over concatenated batches") {
  const MlpModel m = init_mlp({4, 5, 3}, 33);
  const Dataset ds = random_dataset(12, 4, 3, 34);
  std::vector<int> first{0, 1, 2, 3, 4};
  std::vector<int> second{5, 6, 7, 8, 9, 10, 11};
  std::vector<double> w1{1.0, 2.0, 0.5, 1.5, 3.0};
  std::vector<double> w2{0.2, 0.4, 1.0, 2.0, 0.7, 1.1, 0.9};
  Gradients g;
  const double l1 = loss_and_grad(m, ds, first, w1, g).mean_loss;
  const double l2 = loss_and_grad(m, ds, second, w2, g).mean_loss;

  std::vector<int> both = first;
  both.insert(both.end(), second.begin(), second.end());
  std::vector<double> wb = w1;
  wb.insert(wb.end(), w2.begin(), w2.end());
  const double lb = loss_and_grad(m, ds, both, wb, g).mean_loss;

  const double s1 = 8.0, s2 = 6.3;  // weight sums
  CHECK(lb == doctest::Approx((s1 * l1 + s2 * l2) / (s1 + s2)).epsilon(1e-10));
}

TEST_CASE("cost meter counts sample gradients and eval forwards separately") {
  const MlpModel m = init_mlp({3, 4, 2}, 1);
  const Dataset ds = random_dataset(10, 3, 2, 2);
  CostMeter meter;
  Gradients g;
  const std::vector<double> ones(10, 1.0);
  loss_and_grad(m, ds, all_rows(ds), ones, g, &meter);
  CHECK(meter.sample_gradients == 10);
  CHECK(meter.eval_forwards == 0);
  evaluate(m, ds, &meter);
  CHECK(meter.sample_gradients == 10);
  CHECK(meter.eval_forwards == 10);
  CHECK(meter.billable() == 10);
}

TEST_CASE("evaluate applies the lowest-index argmax tie rule") {
  MlpModel m = init_mlp({2, 2}, 1);
  m.weights[0].setZero();
  m.biases[0].setZero();  // constant equal logits: every argmax ties to class 0
  Dataset ds = random_dataset(10, 2, 2, 3);
  for (int i = 0; i < 10; ++i) ds.labels[static_cast<std::size_t>(i)] = i % 2;  // balanced
  const LossReport rep = evaluate(m, ds);
  CHECK(rep.accuracy == doctest::Approx(0.5));
}

TEST_CASE("evaluate reaches accuracy 1 on a separable toy problem") {
  MlpModel m = init_mlp({1, 2}, 1);
  m.weights[0] << 1.0, -1.0;  // logit margin follows the sign of x
  m.biases[0].setZero();
  Dataset ds;
  ds.features.resize(6, 1);
  ds.features << 1.5, -2.0, 0.5, -0.25, 3.0, -1.0;
  ds.labels = {0, 1, 0, 1, 0, 1};
  ds.n_classes = 2;
  CHECK(evaluate(m, ds).accuracy == 1.0);
}

TEST_CASE("evaluate mean loss equals the mean of per-sample losses") {
  const MlpModel m = init_mlp({3, 5, 3}, 9);
  const Dataset ds = random_dataset(9, 3, 3, 10);
  const LossReport whole = evaluate(m, ds);
  double acc = 0.0;
  Gradients g;
  const std::vector<double> one(1, 1.0);
  for (int i = 0; i < 9; ++i) {
    const std::vector<int> single{i};
    acc += loss_and_grad(m, ds, single, one, g).mean_loss;
  }
  CHECK(whole.mean_loss == doctest::Approx(acc / 9.0).epsilon(1e-12));
}

TEST_CASE("sgd step leaves parameters unchanged on a zero gradient") {
  MlpModel m = init_mlp({3, 4, 2}, 6);
  const MlpModel before = m;
  OptimizerConfig cfg;
  cfg.kind = OptimizerConfig::Kind::sgd;
  cfg.weight_decay = 0.0;
  Optimizer opt(cfg);
  opt.step(m, Gradients::zeros_like(m), 0);
  CHECK(models_identical(m, before));
}

TEST_CASE("step schedule follows lr * gamma^floor(t/period)") {
  OptimizerConfig cfg;
  cfg.lr = 0.01;
  cfg.schedule = OptimizerConfig::Schedule::step;
  cfg.gamma = 0.1;
  cfg.step_period = 20;
  CHECK(scheduled_lr(cfg, 0) == doctest::Approx(0.01));
  CHECK(scheduled_lr(cfg, 19) == doctest::Approx(0.01));
  CHECK(scheduled_lr(cfg, 20) == doctest::Approx(0.001));
  CHECK(scheduled_lr(cfg, 40) == doctest::Approx(0.0001));
}

TEST_CASE("cosine schedule spans lr down to zero") {
  OptimizerConfig cfg;
  cfg.lr = 0.5;
  cfg.schedule = OptimizerConfig::Schedule::cosine;
  cfg.total_epochs = 100;
  CHECK(scheduled_lr(cfg, 0) == doctest::Approx(0.5));
  CHECK(scheduled_lr(cfg, 50) == doctest::Approx(0.25));
  CHECK(scheduled_lr(cfg, 100) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("first adam step has magnitude about lr") {
  MlpModel m = init_mlp({2, 3}, 4);
  const MlpModel before = m;
  OptimizerConfig cfg;
  cfg.kind = OptimizerConfig::Kind::adam;
  cfg.lr = 0.001;
  Optimizer opt(cfg);
  Gradients g = Gradients::zeros_like(m);
  g.weights[0].setConstant(0.5);
  g.biases[0].setConstant(0.5);
  opt.step(m, g, 0);
  const Eigen::MatrixXd delta = (before.weights[0] - m.weights[0]).cwiseAbs();
  // bias-corrected first step: lr * g / (|g| + eps) ~ lr
  CHECK(delta.minCoeff() == doctest::Approx(0.001).epsilon(1e-6));
  CHECK(delta.maxCoeff() == doctest::Approx(0.001).epsilon(1e-6));
}

TEST_CASE("optimizer rejects non-finite gradients and names the layer") {
  MlpModel m = init_mlp({2, 3, 2}, 4);
  Optimizer opt(OptimizerConfig{});
  Gradients g = Gradients::zeros_like(m);
  g.weights[1](0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(opt.step(m, g, 0), doctest::Contains("layer 1"), ConfigError);
}

TEST_CASE("update sequences are bit-deterministic") {
  const Dataset ds = random_dataset(30, 4, 3, 55);
  const auto run = [&]() {
    MlpModel m = init_mlp({4, 6, 3}, 56);
    OptimizerConfig cfg;
    cfg.kind = OptimizerConfig::Kind::adam;
    cfg.lr = 0.01;
    Optimizer opt(cfg);
    Gradients g;
    const std::vector<double> ones(30, 1.0);
    for (int epoch = 0; epoch < 5; ++epoch) {
      loss_and_grad(m, ds, all_rows(ds), ones, g);
      opt.step(m, g, epoch);
    }
    return m;
  };
  CHECK(models_identical(run(), run()));
}

TEST_CASE("per-batch last-layer gradients sum to the full vector") {
  const MlpModel m = init_mlp({6, 8, 4, 3}, 77);
  const Dataset ds = random_dataset(53, 6, 3, 78);
  const BatchPlan plan = make_batches(ds, 10, 79);
  const LastLayerGradients g = per_batch_last_layer_gradients(m, ds, plan);
  CHECK(g.full.size() == (4 + 1) * 3);
  CHECK(g.per_batch.cols() == plan.batch_count());
  const Eigen::VectorXd sum = g.per_batch.rowwise().sum();
  CHECK((sum - g.full).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("single-batch plan reproduces the full gradient vector") {
  const MlpModel m = init_mlp({4, 5, 2}, 70);
  const Dataset ds = random_dataset(12, 4, 2, 71);
  const BatchPlan plan = make_batches(ds, 12, 72);
  const LastLayerGradients g = per_batch_last_layer_gradients(m, ds, plan);
  REQUIRE(g.per_batch.cols() == 1);
  CHECK((g.per_batch.col(0) - g.full).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gradients vanish on a model trained to convergence") {
  // Tiny separable problem driven to near-zero loss.
  Dataset ds;
  ds.features.resize(8, 2);
  ds.features << 2, 0, 3, 0, 2.5, 0, 4, 0, -2, 0, -3, 0, -2.5, 0, -4, 0;
  ds.labels = {0, 0, 0, 0, 1, 1, 1, 1};
  ds.n_classes = 2;
  MlpModel m = init_mlp({2, 4, 2}, 80);
  OptimizerConfig cfg;
  cfg.kind = OptimizerConfig::Kind::adam;
  cfg.lr = 0.05;
  Optimizer opt(cfg);
  Gradients g;
  const std::vector<double> ones(8, 1.0);
  std::vector<int> idx{0, 1, 2, 3, 4, 5, 6, 7};
  for (int epoch = 0; epoch < 4000; ++epoch) {
    loss_and_grad(m, ds, idx, ones, g);
    opt.step(m, g, 0);
  }
  REQUIRE(evaluate(m, ds).mean_loss < 1e-6);
  const BatchPlan plan = make_batches(ds, 2, 81);
  const LastLayerGradients llg = per_batch_last_layer_gradients(m, ds, plan);
  for (long b = 0; b < llg.per_batch.cols(); ++b) {
    CHECK(llg.per_batch.col(b).norm() <= 1e-4);
  }
  CHECK(llg.full.norm() <= 1e-4);
}

TEST_CASE("checkpoints round trip bit-exactly") {
  const MlpModel m = init_mlp({7, 9, 4}, 123);
  const std::string path = "/tmp/coretune_test_ckpt.bin";
  save_checkpoint(m, path);
  const MlpModel loaded = load_checkpoint(path);
  CHECK(models_identical(m, loaded));
}
