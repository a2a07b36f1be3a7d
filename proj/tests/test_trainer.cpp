#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "bitseg/trainer.hpp"

namespace bitseg {
namespace {

ParamRef scalar_param(FloatTensor& w, FloatTensor& g, bool latent = false) {
  return {&w, &g, latent, false, "w"};
}

TEST(Optimizer, SgdSingleStep) {
  FloatTensor w({1, 1, 1, 1}, 1.0f), g({1, 1, 1, 1}, 0.5f);
  std::vector<ParamRef> p{scalar_param(w, g)};
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::kSgd;
  cfg.lr = 0.1;
  cfg.momentum = 0;
  OptimizerState st;
  optimizer_step(p, st, cfg);
  EXPECT_FLOAT_EQ(w[0], 0.95f);
}

TEST(Optimizer, SgdMomentumTwoSteps) {
  FloatTensor w({1, 1, 1, 1}, 2.0f), g({1, 1, 1, 1}, 1.0f);
  std::vector<ParamRef> p{scalar_param(w, g)};
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::kSgd;
  cfg.lr = 0.1;
  cfg.momentum = 0.9;
  OptimizerState st;
  optimizer_step(p, st, cfg);
  optimizer_step(p, st, cfg);
  EXPECT_NEAR(w[0], 2.0 - 0.1 - 0.19, 1e-6);
}

TEST(Optimizer, AdamFirstStepIsLr) {
  // Bias-corrected first step: m_hat = g, v_hat = g^2, so dw = lr * g / (|g| + eps).
  for (float gv : {0.5f, -3.0f, 1e-3f}) {
    FloatTensor w({1, 1, 1, 1}, 0.0f), g({1, 1, 1, 1}, gv);
    std::vector<ParamRef> p{scalar_param(w, g)};
    TrainConfig cfg;
    OptimizerState st;
    optimizer_step(p, st, cfg);
    const double expect = -cfg.lr * gv / (std::abs(gv) + cfg.adam_eps);
    EXPECT_NEAR(w[0], expect, 1e-9);
    EXPECT_NEAR(std::abs(w[0]), cfg.lr, cfg.lr * 1e-4);
  }
}

TEST(Optimizer, LatentsClippedAfterStep) {
  FloatTensor w({1, 1, 1, 2}, std::vector<float>{0.999f, -0.5f}), g({1, 1, 1, 2}, -10.0f);
  std::vector<ParamRef> p{scalar_param(w, g, true)};
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::kSgd;
  cfg.lr = 1.0;
  cfg.momentum = 0;
  OptimizerState st;
  optimizer_step(p, st, cfg);
  EXPECT_EQ(w[0], 1.0f);
  EXPECT_EQ(w[1], 1.0f);
}

TEST(Optimizer, WeightDecayOnlyWhereFlagged) {
  FloatTensor a({1, 1, 1, 1}, 1.0f), b({1, 1, 1, 1}, 1.0f), ga({1, 1, 1, 1}), gb({1, 1, 1, 1});
  std::vector<ParamRef> p{{&a, &ga, false, true, "a"}, {&b, &gb, false, false, "b"}};
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::kSgd;
  cfg.momentum = 0;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  OptimizerState st;
  optimizer_step(p, st, cfg);
  EXPECT_FLOAT_EQ(a[0], 0.95f);
  EXPECT_FLOAT_EQ(b[0], 1.0f);
}

TEST(ClipLatent, Values) {
  FloatTensor w({1, 1, 1, 3}, std::vector<float>{1.5f, -0.3f, -7.0f});
  clip_latent(w);
  EXPECT_EQ(w[0], 1.0f);
  EXPECT_EQ(w[1], -0.3f);
  EXPECT_EQ(w[2], -1.0f);
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.height = c.width = 16;
  c.stages = {4, 8, 8};
  c.dilations = {1, 2};
  return c;
}

SceneParams tiny_scenes() {
  SceneParams p;
  p.height = p.width = 16;
  return p;
}

TEST(Train, ZeroLrIsFixedPoint) {
  Model m(tiny_model());
  const Model before = m;
  const auto data = make_dataset(tiny_scenes(), 8);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.lr = 0;
  train(m, data, data, cfg);
  for (std::size_t i = 0; i < m.layers().size(); ++i) {
    EXPECT_EQ(m.layers()[i].weight, before.layers()[i].weight);
    EXPECT_EQ(m.layers()[i].norm.gamma, before.layers()[i].norm.gamma);
    EXPECT_EQ(m.layers()[i].slope, before.layers()[i].slope);
  }
}

TEST(Train, LossDecreasesAndLatentsStayClipped) {
  Model m(tiny_model());
  const auto data = make_dataset(tiny_scenes(), 8);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.lr = 5e-3;
  const auto h = train(m, data, data, cfg);
  ASSERT_EQ(h.epochs.size(), 30u);
  EXPECT_LT(h.epochs.back().loss, h.epochs.front().loss);
  for (const auto& l : m.layers())
    if (l.binary())
      for (float v : l.weight.vec()) ASSERT_LE(std::abs(v), 1.0f);
}

TEST(Train, SameSeedSameHistoryAndWeights) {
  const auto data = make_dataset(tiny_scenes(), 12);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  Model a(tiny_model()), b(tiny_model());
  const auto ha = train(a, data, data, cfg), hb = train(b, data, data, cfg);
  EXPECT_EQ(ha.log(), hb.log());
  for (std::size_t i = 0; i < ha.epochs.size(); ++i) EXPECT_EQ(ha.epochs[i].loss, hb.epochs[i].loss);
  for (std::size_t i = 0; i < a.layers().size(); ++i) EXPECT_EQ(a.layers()[i].weight, b.layers()[i].weight);
}

TEST(Train, DivergenceNamesEpoch) {
  for (bool binary : {false, true}) {
    ModelConfig c = tiny_model();
    c.binarize_all(binary);
    Model m(c);
    m.layers()[0].weight[0] = std::numeric_limits<float>::infinity();
    const auto data = make_dataset(tiny_scenes(), 4);
    TrainConfig cfg;
    cfg.epochs = 2;
    try {
      train(m, data, data, cfg);
      FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
      EXPECT_EQ(e.epoch(), 1u);
      EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
    }
  }
}

TEST(Train, Errors) {
  Model m(tiny_model());
  TrainConfig cfg;
  EXPECT_THROW(train(m, Dataset{}, Dataset{}, cfg), ArgumentError);
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.lr = -1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(History, LogFormat) {
  History h;
  h.epochs.push_back({1, 0.5, 0.25});
  h.epochs.push_back({2, 0.125, 0.75});
  EXPECT_EQ(h.log(), "1,0.500000,0.250000\n2,0.125000,0.750000\n");
}

}  // namespace
}  // namespace bitseg
