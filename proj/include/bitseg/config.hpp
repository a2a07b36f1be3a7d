#pragma once

// Flat run configuration for the command-line tool: one key namespace over the
// model, trainer, scene generator and cost model. Sources are applied in
// order (file, then overrides) so later values win; unknown keys are errors.

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bitseg/complexity.hpp"
#include "bitseg/dadnet.hpp"
#include "bitseg/error.hpp"
#include "bitseg/kv.hpp"
#include "bitseg/scenes.hpp"
#include "bitseg/trainer.hpp"

namespace bitseg {

struct KeyDoc {
  const char* key;
  const char* help;
};

inline const std::vector<KeyDoc>& config_keys() {
  static const std::vector<KeyDoc> keys{
      {"height", "input and scene height in pixels (multiple of 8)"},
      {"width", "input and scene width in pixels (multiple of 8)"},
      {"width_mult", "channel multiplier applied to stages"},
      {"stages", "encoder stage channels, comma-separated (3 entries)"},
      {"dilations", "bottleneck dilation rates, each in [1,4]"},
      {"binarize_encoder", "binarize encoder convolutions"},
      {"binarize_bottleneck", "binarize bottleneck convolutions"},
      {"binarize_decoder", "binarize decoder convolutions"},
      {"binarize_first_layer", "binarize the stem when the encoder is binarized"},
      {"binarize_last_layer", "binarize the classifier when the decoder is binarized"},
      {"multi_base", "binary bases per filter (M)"},
      {"activation_scaling", "per-position activation scale K on binary convs"},
      {"seed", "weight initialization seed"},
      {"epochs", "training epochs"},
      {"batch_size", "samples per optimizer step"},
      {"optimizer", "sgd or adam"},
      {"lr", "learning rate"},
      {"momentum", "SGD momentum"},
      {"beta1", "Adam beta1"},
      {"beta2", "Adam beta2"},
      {"adam_eps", "Adam epsilon"},
      {"weight_decay", "L2 decay on float conv weights"},
      {"latent_clip", "binary latent weights are clipped to [-v, v]"},
      {"train_seed", "shuffle seed"},
      {"shuffle", "reshuffle the training set every epoch"},
      {"train_scenes", "generated training scenes"},
      {"eval_scenes", "generated held-out scenes"},
      {"scene_seed", "scene generator seed"},
      {"bottom_width_min", "road width at the bottom row, lower bound (fraction of width)"},
      {"bottom_width_max", "road width at the bottom row, upper bound"},
      {"horizon_min", "horizon row, lower bound (fraction of height)"},
      {"horizon_max", "horizon row, upper bound"},
      {"top_width", "road width at the horizon (fraction of width)"},
      {"curvature_max", "largest lateral bend of the far road"},
      {"noise_sigma", "Gaussian pixel noise"},
      {"distractors_min", "fewest off-road rectangles per scene"},
      {"distractors_max", "most off-road rectangles per scene"},
      {"bitop_per_mac", "cost of one binary op in MACs, in (0,1]"},
  };
  return keys;
}

struct CliConfig {
  ModelConfig model;
  TrainConfig train;
  SceneParams scenes;
  CostModel cost;
  std::size_t train_scenes = 160;
  std::size_t eval_scenes = 40;

  bool set(const kv::Entry& e) {
    const auto& k = e.key;
    if (k == "height" || k == "width") {
      model.set(e);
      (k == "height" ? scenes.height : scenes.width) = kv::to_uint(e);
      return true;
    }
    if (model.set(e) || train.set(e)) return true;
    if (k == "train_scenes") train_scenes = kv::to_uint(e);
    else if (k == "eval_scenes") eval_scenes = kv::to_uint(e);
    else if (k == "scene_seed") scenes.seed = kv::to_uint(e);
    else if (k == "bottom_width_min") scenes.bottom_width_min = kv::to_double(e);
    else if (k == "bottom_width_max") scenes.bottom_width_max = kv::to_double(e);
    else if (k == "horizon_min") scenes.horizon_min = kv::to_double(e);
    else if (k == "horizon_max") scenes.horizon_max = kv::to_double(e);
    else if (k == "top_width") scenes.top_width = kv::to_double(e);
    else if (k == "curvature_max") scenes.curvature_max = kv::to_double(e);
    else if (k == "noise_sigma") scenes.noise_sigma = kv::to_double(e);
    else if (k == "distractors_min") scenes.distractors_min = kv::to_uint(e);
    else if (k == "distractors_max") scenes.distractors_max = kv::to_uint(e);
    else if (k == "bitop_per_mac") cost.bitop_per_mac = kv::to_double(e);
    else return false;
    return true;
  }

  void apply(const kv::Entry& e) {
    if (!set(e)) throw ConfigError(kv::where(e) + "unknown key '" + e.key + "'");
  }

  void validate() const {
    model.validate();
    train.validate();
    scenes.validate();
    cost.validate();
  }

  // Current value of every documented key, as text.
  std::vector<std::pair<std::string, std::string>> values() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& e : kv::parse_lines(model.to_text())) out.emplace_back(e.key, e.value);
    auto put = [&](const char* k, std::string v) { out.emplace_back(k, std::move(v)); };
    auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    auto d = kv::from_double;
    put("epochs", std::to_string(train.epochs));
    put("batch_size", std::to_string(train.batch_size));
    put("optimizer", train.optimizer == OptimizerKind::kAdam ? "adam" : "sgd");
    put("lr", d(train.lr));
    put("momentum", d(train.momentum));
    put("beta1", d(train.beta1));
    put("beta2", d(train.beta2));
    put("adam_eps", d(train.adam_eps));
    put("weight_decay", d(train.weight_decay));
    put("latent_clip", d(train.latent_clip));
    put("train_seed", std::to_string(train.seed));
    put("shuffle", b(train.shuffle));
    put("train_scenes", std::to_string(train_scenes));
    put("eval_scenes", std::to_string(eval_scenes));
    put("scene_seed", std::to_string(scenes.seed));
    put("bottom_width_min", d(scenes.bottom_width_min));
    put("bottom_width_max", d(scenes.bottom_width_max));
    put("horizon_min", d(scenes.horizon_min));
    put("horizon_max", d(scenes.horizon_max));
    put("top_width", d(scenes.top_width));
    put("curvature_max", d(scenes.curvature_max));
    put("noise_sigma", d(scenes.noise_sigma));
    put("distractors_min", std::to_string(scenes.distractors_min));
    put("distractors_max", std::to_string(scenes.distractors_max));
    put("bitop_per_mac", d(cost.bitop_per_mac));
    return out;
  }

  std::string to_text() const {
    std::string s;
    for (const auto& [k, v] : values()) s += k + "=" + v + "\n";
    return s;
  }
};

// File text first, then "key=value" overrides.
inline CliConfig parse_config(std::string_view file_text,
                              const std::vector<std::string>& overrides = {}) {
  CliConfig c;
  for (const auto& e : kv::parse_lines(file_text)) c.apply(e);
  for (const auto& o : overrides) c.apply(kv::parse_pair(o, 0));
  c.validate();
  return c;
}

// "key  default  help" per documented key.
inline std::string config_help() {
  const CliConfig def;
  const auto vals = def.values();
  std::string s;
  for (const auto& doc : config_keys()) {
    std::string v = "?";
    for (const auto& [k, val] : vals)
      if (k == doc.key) v = val;
    char buf[256];
    std::snprintf(buf, sizeof buf, "  %-22s %-10s %s\n", doc.key, v.c_str(), doc.help);
    s += buf;
  }
  return s;
}

}  // namespace bitseg
