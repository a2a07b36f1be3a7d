#pragma once

// STE training over latent full-precision weights. Each step: forward in
// train mode (binary layers re-binarize their latents), mean cross-entropy,
// reverse sweep, optimizer update, then latent clipping to [-1, 1].

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "bitseg/dadnet.hpp"
#include "bitseg/error.hpp"
#include "bitseg/graph.hpp"
#include "bitseg/kv.hpp"
#include "bitseg/rng.hpp"
#include "bitseg/scenes.hpp"

namespace bitseg {

enum class OptimizerKind { kSgd, kAdam };

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double lr = 1e-3;
  double momentum = 0.9;  // SGD
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double weight_decay = 0.0;  // float conv weights only
  double latent_clip = 1.0;   // binary latents kept in [-clip, clip]
  std::uint64_t seed = 1;
  bool shuffle = true;

  void validate() const {
    // lr = 0 is allowed: it is the documented fixed-point check.
    if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite value >= 0");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must lie in [0,1)");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
      throw ConfigError("adam betas must lie in [0,1)");
    if (!(adam_eps > 0)) throw ConfigError("adam_eps must be positive");
    if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
    if (!(latent_clip > 0)) throw ConfigError("latent_clip must be positive");
  }

  bool set(const kv::Entry& e) {
    const auto& k = e.key;
    if (k == "epochs") epochs = kv::to_uint(e);
    else if (k == "batch_size") batch_size = kv::to_uint(e);
    else if (k == "optimizer") {
      if (e.value == "adam") optimizer = OptimizerKind::kAdam;
      else if (e.value == "sgd") optimizer = OptimizerKind::kSgd;
      else throw ConfigError(kv::where(e) + "optimizer expects sgd or adam, got '" + e.value + "'");
    } else if (k == "lr") lr = kv::to_double(e);
    else if (k == "momentum") momentum = kv::to_double(e);
    else if (k == "beta1") beta1 = kv::to_double(e);
    else if (k == "beta2") beta2 = kv::to_double(e);
    else if (k == "adam_eps") adam_eps = kv::to_double(e);
    else if (k == "weight_decay") weight_decay = kv::to_double(e);
    else if (k == "latent_clip") latent_clip = kv::to_double(e);
    else if (k == "train_seed") seed = kv::to_uint(e);
    else if (k == "shuffle") shuffle = kv::to_bool(e);
    else return false;
    return true;
  }
};

struct OptimizerState {
  std::vector<FloatTensor> m, v;  // SGD uses m as the velocity
  std::size_t steps = 0;
};

inline void clip_latent(FloatTensor& w, double limit = 1.0) {
  const float lim = static_cast<float>(limit);
  for (auto& v : w.vec()) v = std::clamp(v, -lim, lim);
}

// One update of every parameter with a gradient. Binary latents are clipped
// afterwards.
inline void optimizer_step(std::vector<ParamRef>& params, OptimizerState& st,
                           const TrainConfig& cfg) {
  if (st.m.size() != params.size()) {
    st.m.assign(params.size(), FloatTensor());
    st.v.assign(params.size(), FloatTensor());
  }
  ++st.steps;
  const double t = static_cast<double>(st.steps);
  const double bc1 = 1 - std::pow(cfg.beta1, t), bc2 = 1 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (p.grad->empty()) continue;
    FloatTensor& w = *p.value;
    const FloatTensor& g = *p.grad;
    if (g.shape() != w.shape()) throw DimensionError("optimizer: gradient shape for " + p.name);
    if (st.m[i].empty()) st.m[i] = FloatTensor(w.shape());
    if (cfg.optimizer == OptimizerKind::kAdam && st.v[i].empty()) st.v[i] = FloatTensor(w.shape());
    for (std::size_t j = 0; j < w.size(); ++j) {
      double gj = g[j];
      if (p.decay) gj += cfg.weight_decay * w[j];
      if (cfg.optimizer == OptimizerKind::kSgd) {
        const double vel = cfg.momentum * st.m[i][j] + gj;
        st.m[i][j] = static_cast<float>(vel);
        w[j] = static_cast<float>(w[j] - cfg.lr * vel);
      } else {
        const double m = cfg.beta1 * st.m[i][j] + (1 - cfg.beta1) * gj;
        const double v = cfg.beta2 * st.v[i][j] + (1 - cfg.beta2) * gj * gj;
        st.m[i][j] = static_cast<float>(m);
        st.v[i][j] = static_cast<float>(v);
        w[j] = static_cast<float>(w[j] - cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.adam_eps));
      }
    }
    if (p.binary_latent) clip_latent(w, cfg.latent_clip);
  }
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // sample-weighted mean training loss
  double road_iou = 0.0;  // on the held-out split
};

struct History {
  std::vector<EpochRecord> epochs;

  static std::string log_line(const EpochRecord& r) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f", r.epoch, r.loss, r.road_iou);
    return buf;
  }

  // "epoch,loss,road_iou" per line.
  std::string log() const {
    std::string s;
    for (const auto& r : epochs) s += log_line(r) + "\n";
    return s;
  }
};

// Samples idx[begin, end) of d as one batch.
inline void gather_batch(const Dataset& d, const std::vector<std::size_t>& idx, std::size_t begin,
                         std::size_t end, FloatTensor& x, std::vector<std::uint8_t>& y) {
  const std::size_t px = d.pixels();
  x = FloatTensor({end - begin, 3, d.images.h(), d.images.w()});
  y.resize((end - begin) * px);
  for (std::size_t i = begin; i < end; ++i) {
    const auto src = d.images.sample(idx[i]);
    std::copy(src.begin(), src.end(), x.sample(i - begin).begin());
    std::copy(d.masks.begin() + static_cast<std::ptrdiff_t>(idx[i] * px),
              d.masks.begin() + static_cast<std::ptrdiff_t>((idx[i] + 1) * px),
              y.begin() + static_cast<std::ptrdiff_t>((i - begin) * px));
  }
}

// Inference-mode metrics over a dataset, aggregated over all pixels.
inline SegMetrics evaluate(const Model& m, const Dataset& d, std::size_t batch = 16) {
  Confusion c;
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), 0);
  FloatTensor x;
  std::vector<std::uint8_t> y;
  for (std::size_t b = 0; b < d.size(); b += batch) {
    const std::size_t e = std::min(d.size(), b + batch);
    gather_batch(d, idx, b, e, x, y);
    c.add(predict_mask(m.forward(x)), y);
  }
  return c.metrics();
}

// Mean loss of one training step; updates the model in place.
inline double train_step(Model& m, const FloatTensor& x, const std::vector<std::uint8_t>& y,
                         OptimizerState& st, const TrainConfig& cfg,
                         std::vector<ParamRef>& params) {
  m.zero_grad();
  Graph<float> g;
  const auto logits = m.trace(g, x, BnMode::kTrain);
  const auto loss = g.ce_loss(logits, y);
  const double value = g.value(loss)[0];
  if (!std::isfinite(value)) return value;
  g.backward(loss);
  optimizer_step(params, st, cfg);
  return value;
}

using EpochCallback = std::function<void(const EpochRecord&)>;

inline History train(Model& m, const Dataset& train_set, const Dataset& eval_set,
                     const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_set.size() == 0) throw ArgumentError("train: empty training set");
  m.thaw();
  auto params = m.params();
  OptimizerState st;
  History h;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  FloatTensor x;
  std::vector<std::uint8_t> y;
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    if (cfg.shuffle) {
      SplitMix64 rng = SplitMix64::stream(cfg.seed, e);
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    }
    EpochRecord r{e, 0.0, 0.0};
    try {
      double sum = 0.0;
      for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), b + cfg.batch_size);
        gather_batch(train_set, order, b, end, x, y);
        const double loss = train_step(m, x, y, st, cfg, params);
        if (!std::isfinite(loss)) throw TrainingError("training diverged: loss is not finite", e);
        sum += loss * static_cast<double>(end - b);
      }
      r.loss = sum / static_cast<double>(order.size());
      if (eval_set.size()) r.road_iou = evaluate(m, eval_set).iou_road;
    } catch (const NumericError& err) {
      throw TrainingError(std::string("training diverged: ") + err.what(), e);
    }
    h.epochs.push_back(r);
    if (on_epoch) on_epoch(r);
  }
  return h;
}

}  // namespace bitseg
