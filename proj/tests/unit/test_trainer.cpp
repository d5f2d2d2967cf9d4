#include <cmath>
#include <cstring>

#include <gtest/gtest.h>

#include "protex/error.hpp"
#include "protex/synthetic.hpp"
#include "protex/trainer.hpp"
#include "test_util.hpp"

using namespace protex;

namespace {

Dataset small_clusters(std::uint64_t seed = 3) {
  ClusterSpec spec;
  spec.n_train = 80;
  spec.n_val = 20;
  spec.n_test = 20;
  spec.seed = seed;
  return make_gaussian_clusters(spec);
}

TrainConfig small_cfg(std::size_t epochs = 10) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.prototypes = 4;
  cfg.seed = 5;
  cfg.validate_every = 2;
  cfg.head_finetune_epochs = 4;
  return cfg;
}

}  // namespace

TEST(Trainer, LearningRateSchedule) {
  TrainConfig cfg;
  cfg.epochs = 200;
  EXPECT_DOUBLE_EQ(cfg.warmup_epochs(), 10.0);
  EXPECT_DOUBLE_EQ(lr_at(5, cfg), 0.0005);
  EXPECT_DOUBLE_EQ(lr_at(10, cfg), 0.001);
  EXPECT_DOUBLE_EQ(lr_at(105, cfg), 0.001 * 95.0 / 190.0);
  EXPECT_EQ(lr_at(200, cfg), 0.0);
  cfg.epochs = 100;
  EXPECT_DOUBLE_EQ(cfg.warmup_epochs(), 5.0);
  EXPECT_DOUBLE_EQ(lr_at(1, cfg), 0.0002);
  EXPECT_EQ(cfg.projection_epoch(Mode::sentence), 80u);
  EXPECT_EQ(cfg.projection_epoch(Mode::word), 0u);
  EXPECT_DOUBLE_EQ(cfg.retrain_lr(), 0.001 * 20.0 / 95.0);
  cfg.project_at_epoch = 0;
  EXPECT_EQ(cfg.projection_epoch(Mode::sentence), 0u);
}

TEST(Trainer, AdamMatchesManualSteps) {
  Mat p(2, 1, 0.0);
  p(0, 0) = 1.0;
  p(1, 0) = 4.0;
  Adam adam;
  const AdamConfig ac;
  const double gs[] = {0.5, -0.25};
  double m = 0, v = 0, x = 1.0;
  for (int t = 1; t <= 2; ++t) {
    Mat g(2, 1, 0.0);
    g(0, 0) = gs[t - 1];
    g(1, 0) = 100.0;
    const std::uint8_t rows[] = {1, 0};
    adam.step(p, g, 0.01, ac, rows);
    m = 0.9 * m + 0.1 * gs[t - 1];
    v = 0.999 * v + 0.001 * gs[t - 1] * gs[t - 1];
    x -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  EXPECT_NEAR(p(0, 0), x, 1e-15);
  EXPECT_EQ(p(1, 0), 4.0);  // disabled row untouched
  EXPECT_EQ(adam.steps(), 2u);
}

TEST(Trainer, BalancedAccuracy) {
  const std::vector<int> y{0, 0, 0, 1}, p{0, 0, 1, 0};
  EXPECT_DOUBLE_EQ(balanced_accuracy(p, y, 2), (2.0 / 3.0 + 0.0) / 2.0);
  const std::vector<int> y3{2, 2}, p3{2, 0};
  EXPECT_DOUBLE_EQ(balanced_accuracy(p3, y3, 3), 0.5);  // absent classes ignored
}

TEST(Trainer, InitIsBalancedUnitNorm) {
  const auto ds = small_clusters();
  auto cfg = small_cfg();
  cfg.prototypes = 6;
  const auto m = init_model(cfg, ds);
  EXPECT_EQ(m.protos.class_of, (std::vector<int>{0, 0, 0, 1, 1, 1}));
  for (std::size_t j = 0; j < 6; ++j) {
    double n2 = 0;
    for (double v : m.protos.vecs.row(j)) n2 += v * v;
    EXPECT_NEAR(std::sqrt(n2), 1.0, 1e-6);
    EXPECT_EQ(m.head(static_cast<std::size_t>(m.protos.class_of[j]), j), 1.0);
    EXPECT_EQ(m.head(static_cast<std::size_t>(1 - m.protos.class_of[j]), j), 0.0);
  }
  cfg.prototypes = 5;
  try {
    init_model(cfg, ds);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IndivisibleM);
  }
}

TEST(Trainer, TrainingIsDeterministic) {
  const auto ds = small_clusters();
  const auto cfg = small_cfg();
  const auto a = train(ds, init_model(cfg, ds), cfg);
  const auto b = train(ds, init_model(cfg, ds), cfg);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(a.report.to_json().dump(), b.report.to_json().dump());
  EXPECT_EQ(a.report.epochs.size(), 8u + 4u);  // 0.8e joint epochs, then head fine-tuning
  EXPECT_TRUE(a.report.projection.has_value());
  EXPECT_EQ(a.report.epochs.back().phase, Phase::head);
}

TEST(Trainer, BestSnapshotIsRetained) {
  const auto ds = small_clusters(11);
  auto cfg = small_cfg(12);
  cfg.project_at_epoch = 0;
  cfg.validate_every = 1;
  const auto r = train(ds, init_model(cfg, ds), cfg);
  double best = -1;
  std::size_t best_epoch = 0;
  for (const auto& rec : r.report.epochs) {
    ASSERT_TRUE(rec.val_bacc.has_value());
    if (*rec.val_bacc >= best) {
      best = *rec.val_bacc;
      best_epoch = rec.epoch;
    }
  }
  EXPECT_EQ(r.report.best_val_bacc, best);
  EXPECT_EQ(r.report.best_epoch, best_epoch);
  EXPECT_EQ(r.model.epoch, best_epoch);
}

TEST(Trainer, FrozenPrototypesAreBitIdentical) {
  const auto ds = small_clusters();
  auto cfg = small_cfg();
  auto model = init_model(cfg, ds);
  model.protos.frozen[1] = 1;
  const std::vector<double> before(model.protos.vecs.row(1).begin(), model.protos.vecs.row(1).end());
  const auto r = train(ds, model, cfg);
  const std::vector<double> after(r.model.protos.vecs.row(1).begin(), r.model.protos.vecs.row(1).end());
  EXPECT_EQ(std::memcmp(before.data(), after.data(), before.size() * sizeof(double)), 0);
  // unfrozen rows did move (projection alone guarantees it)
  EXPECT_NE(r.model.protos.vecs(0, 0), model.protos.vecs(0, 0));
}

TEST(Trainer, HookEditsSurvive) {
  const auto ds = small_clusters();
  auto cfg = small_cfg(10);
  cfg.project_at_epoch = 0;
  cfg.validate_every = 1;
  const std::vector<double> planted{0.5, -0.5, 0.25, 0, 0, 0, 0, 0.125};
  auto hook = [&](const EpochRecord& rec, Model& m) {
    if (rec.epoch != 6) return false;
    std::copy(planted.begin(), planted.end(), m.protos.vecs.row(2).begin());
    m.protos.frozen[2] = 1;
    return true;
  };
  const auto r = train(ds, init_model(cfg, ds), cfg, hook);
  for (std::size_t k = 0; k < planted.size(); ++k) EXPECT_EQ(r.model.protos.vecs(2, k), planted[k]);
  EXPECT_GE(r.report.best_epoch, 6u);
}

TEST(Trainer, DivergenceStopsAndKeepsFiniteModel) {
  const auto ds = small_clusters();
  auto cfg = small_cfg(10);
  cfg.lr_base = 1e300;
  cfg.project_at_epoch = 0;
  const auto r = train(ds, init_model(cfg, ds), cfg);
  EXPECT_TRUE(r.report.diverged);
  for (double v : r.model.protos.vecs.flat()) EXPECT_TRUE(std::isfinite(v));
  for (double v : r.model.head.flat()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Trainer, ConfigValidation) {
  TrainConfig cfg;
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = TrainConfig{};
  cfg.loss.sep = -1;
  EXPECT_THROW(cfg.validate(), Error);
}
