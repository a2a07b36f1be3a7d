#pragma once

// DAD-Net: encoder (output stride 8) -> parallel dilated bottleneck ->
// decoder with one skip connection -> 2-class head.
//
//   stem     [in-BN] conv3x3 3->c0                     H
//   enc1     conv3x3/s2 c0->c0, conv3x3 c0->c0         H/2   (skip)
//   enc2     conv3x3/s2 c0->c1, conv3x3 c1->c1         H/4
//   enc3     conv3x3/s2 c1->c2, conv3x3 c2->c2         H/8
//   bneck    conv3x3 dil r c2->c2 for r in rates, concat, conv1x1 -> c2
//   dec      up x4, concat skip, conv3x3 (c2+c0)->c0, up x2
//   head     conv1x1 c0->2
//
// Every conv except the head is followed by BN and PReLU. Binary layers
// binarize their input activations at 0; the stem's input BN turns that into
// a learned per-channel threshold on the raw image.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bitseg/binarize.hpp"
#include "bitseg/byteio.hpp"
#include "bitseg/conv.hpp"
#include "bitseg/error.hpp"
#include "bitseg/graph.hpp"
#include "bitseg/kv.hpp"
#include "bitseg/rng.hpp"
#include "bitseg/scenes.hpp"
#include "bitseg/tensor.hpp"

namespace bitseg {

inline constexpr std::size_t kMaxDilation = 4;

struct ModelConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  double width_mult = 1.0;
  std::vector<std::size_t> stages{16, 32, 64};
  std::vector<std::size_t> dilations{1, 2, 4};
  bool binarize_encoder = true;
  bool binarize_bottleneck = true;
  bool binarize_decoder = true;
  bool binarize_first_layer = true;
  bool binarize_last_layer = true;
  std::size_t multi_base = 1;
  bool activation_scaling = false;
  std::uint64_t seed = 1;

  std::size_t channels(std::size_t stage) const {
    const double c = std::round(static_cast<double>(stages.at(stage)) * width_mult);
    return c < 1 ? 1 : static_cast<std::size_t>(c);
  }

  void validate() const {
    if (stages.size() != 3)
      throw ConfigError("stages: need exactly 3 encoder stages (output stride 8), got " +
                        std::to_string(stages.size()));
    for (auto c : stages)
      if (c == 0) throw ConfigError("stages: channel counts must be positive");
    if (dilations.empty()) throw ConfigError("dilations: need at least one rate");
    for (auto d : dilations)
      if (d < 1 || d > kMaxDilation)
        throw ConfigError("dilations: rate " + std::to_string(d) + " outside [1," +
                          std::to_string(kMaxDilation) + "]");
    if (!(width_mult > 0) || !std::isfinite(width_mult))
      throw ConfigError("width_mult must be positive");
    if (height == 0 || width == 0 || height % 8 || width % 8)
      throw ConfigError("input size must be a positive multiple of 8, got " +
                        std::to_string(height) + "x" + std::to_string(width));
    if (multi_base < 1) throw ConfigError("multi_base must be >= 1");
  }

  std::string to_text() const {
    std::string s;
    auto put = [&](const char* k, const std::string& v) { s += std::string(k) + "=" + v + "\n"; };
    auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    put("height", std::to_string(height));
    put("width", std::to_string(width));
    put("width_mult", kv::from_double(width_mult));
    put("stages", kv::from_list(stages));
    put("dilations", kv::from_list(dilations));
    put("binarize_encoder", b(binarize_encoder));
    put("binarize_bottleneck", b(binarize_bottleneck));
    put("binarize_decoder", b(binarize_decoder));
    put("binarize_first_layer", b(binarize_first_layer));
    put("binarize_last_layer", b(binarize_last_layer));
    put("multi_base", std::to_string(multi_base));
    put("activation_scaling", b(activation_scaling));
    put("seed", std::to_string(seed));
    return s;
  }

  // Applies one key; returns false for keys this struct does not own.
  bool set(const kv::Entry& e) {
    const auto& k = e.key;
    if (k == "height") height = kv::to_uint(e);
    else if (k == "width") width = kv::to_uint(e);
    else if (k == "width_mult") width_mult = kv::to_double(e);
    else if (k == "stages") stages = kv::to_uint_list(e);
    else if (k == "dilations") dilations = kv::to_uint_list(e);
    else if (k == "binarize_encoder") binarize_encoder = kv::to_bool(e);
    else if (k == "binarize_bottleneck") binarize_bottleneck = kv::to_bool(e);
    else if (k == "binarize_decoder") binarize_decoder = kv::to_bool(e);
    else if (k == "binarize_first_layer") binarize_first_layer = kv::to_bool(e);
    else if (k == "binarize_last_layer") binarize_last_layer = kv::to_bool(e);
    else if (k == "multi_base") multi_base = kv::to_uint(e);
    else if (k == "activation_scaling") activation_scaling = kv::to_bool(e);
    else if (k == "seed") seed = kv::to_uint(e);
    else return false;
    return true;
  }

  static ModelConfig from_text(std::string_view text) {
    ModelConfig c;
    for (const auto& e : kv::parse_lines(text))
      if (!c.set(e)) throw ConfigError(kv::where(e) + "unknown key '" + e.key + "'");
    c.validate();
    return c;
  }

  void binarize_all(bool on) {
    binarize_encoder = binarize_bottleneck = binarize_decoder = on;
    binarize_first_layer = binarize_last_layer = on;
  }
};

enum class Part : std::uint8_t { kEncoder, kBottleneck, kDecoder };

inline const char* part_name(Part p) {
  switch (p) {
    case Part::kEncoder: return "encoder";
    case Part::kBottleneck: return "bottleneck";
    case Part::kDecoder: return "decoder";
  }
  return "?";
}

// Per-channel affine batch norm with its running statistics.
struct NormParams {
  FloatTensor gamma, beta;
  FloatTensor gamma_grad, beta_grad;
  BnRunning running;

  explicit NormParams(std::size_t c = 0)
      : gamma({1, c, 1, 1}, 1.0f), beta({1, c, 1, 1}, 0.0f) {
    running.mean.assign(c, 0.0f);
    running.var.assign(c, 1.0f);
  }
  std::size_t channels() const noexcept { return gamma.c(); }
};

// One conv unit: optional input BN, conv (float or binary), optional BN and
// PReLU.
struct ConvLayer {
  std::string name;
  Part part = Part::kEncoder;
  ConvSpec spec;
  std::size_t bases = 1;  // binary layers only
  FloatTensor weight;     // latent weights for binary layers
  FloatTensor weight_grad;
  bool has_input_norm = false, has_norm = true, has_prelu = true;
  NormParams input_norm, norm;
  FloatTensor slope, slope_grad;
  // Packed weights loaded from an inference file; used instead of
  // re-binarizing the latents while set.
  std::shared_ptr<const MultiBaseFilter> frozen;

  bool binary() const noexcept { return spec.binary; }

  MultiBaseFilter filter() const {
    if (frozen) return *frozen;
    return bases == 1 ? to_multi_base(binarize_filterbank(weight))
                      : multi_base_decompose(weight, bases);
  }
};

// Reference to one trainable tensor and how the optimizer must treat it.
struct ParamRef {
  FloatTensor* value;
  FloatTensor* grad;
  bool binary_latent;  // clipped to [-1, 1] after every step
  bool decay;          // float conv weights only
  std::string name;
};

class Model {
 public:
  Model() = default;

  // Builds the graph and draws Kaiming-uniform weights from cfg.seed.
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const std::size_t c0 = cfg_.channels(0), c1 = cfg_.channels(1), c2 = cfg_.channels(2);
    const bool enc = cfg_.binarize_encoder, bot = cfg_.binarize_bottleneck,
               dec = cfg_.binarize_decoder;
    auto add = [&](std::string name, Part part, std::size_t cin, std::size_t cout, std::size_t k,
                   std::size_t stride, std::size_t dil, std::size_t pad, bool binary) {
      ConvLayer l;
      l.name = std::move(name);
      l.part = part;
      l.spec = ConvSpec{cin, cout, k, k, stride, dil, pad, binary};
      l.bases = binary ? cfg_.multi_base : 1;
      l.norm = NormParams(cout);
      l.slope = FloatTensor({1, cout, 1, 1}, 0.25f);
      layers_.push_back(std::move(l));
    };
    add("stem", Part::kEncoder, 3, c0, 3, 1, 1, 1, enc && cfg_.binarize_first_layer);
    layers_.back().has_input_norm = true;
    layers_.back().input_norm = NormParams(3);
    const std::size_t ch[4] = {c0, c0, c1, c2};
    for (std::size_t s = 1; s <= 3; ++s) {
      const std::string base = "enc" + std::to_string(s);
      add(base + "a", Part::kEncoder, ch[s - 1], ch[s], 3, 2, 1, 1, enc);
      add(base + "b", Part::kEncoder, ch[s], ch[s], 3, 1, 1, 1, enc);
    }
    for (auto r : cfg_.dilations)
      add("bneck_d" + std::to_string(r), Part::kBottleneck, c2, c2, 3, 1, r, r, bot);
    add("bneck_fuse", Part::kBottleneck, c2 * cfg_.dilations.size(), c2, 1, 1, 1, 0, bot);
    add("dec", Part::kDecoder, c2 + c0, c0, 3, 1, 1, 1, dec);
    add("head", Part::kDecoder, c0, 2, 1, 1, 1, 0, dec && cfg_.binarize_last_layer);
    layers_.back().has_norm = false;
    layers_.back().has_prelu = false;

    for (std::size_t i = 0; i < layers_.size(); ++i) {
      auto& l = layers_[i];
      l.weight = FloatTensor(l.spec.weight_shape());
      const double bound = std::sqrt(6.0 / static_cast<double>(l.spec.fan_in()));
      SplitMix64 rng = SplitMix64::stream(cfg_.seed, i);
      for (auto& v : l.weight.vec()) v = static_cast<float>(rng.uniform(-bound, bound));
      if (l.binary())
        for (auto& v : l.weight.vec()) v = std::clamp(v, -1.0f, 1.0f);
    }
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  std::vector<ConvLayer>& layers() noexcept { return layers_; }
  const std::vector<ConvLayer>& layers() const noexcept { return layers_; }

  // Spatial input size (H, W) seen by each layer, in layer order.
  std::vector<std::pair<std::size_t, std::size_t>> layer_input_sizes() const {
    const std::size_t H = cfg_.height, W = cfg_.width;
    std::vector<std::pair<std::size_t, std::size_t>> s;
    s.emplace_back(H, W);  // stem
    for (std::size_t st = 0; st < 3; ++st) {
      s.emplace_back(H >> st, W >> st);
      s.emplace_back(H >> (st + 1), W >> (st + 1));
    }
    for (std::size_t r = 0; r <= cfg_.dilations.size(); ++r) s.emplace_back(H / 8, W / 8);
    s.emplace_back(H / 2, W / 2);  // decoder conv after the x4 upsample
    s.emplace_back(H, W);          // head after the x2 upsample
    return s;
  }

  // Records the forward pass on g. Train mode normalizes with batch
  // statistics and updates the running averages; parameters are bound to the
  // model's gradient buffers.
  Graph<float>::Var trace(Graph<float>& g, const FloatTensor& x, BnMode mode) {
    return trace_impl(g, x, mode, true);
  }

  // Inference-mode logits (N, 2, H, W).
  FloatTensor forward(const FloatTensor& x) const {
    Graph<float> g;
    auto out = const_cast<Model*>(this)->trace_impl(g, x, BnMode::kInference, false);
    return g.value(out);
  }

  std::vector<ParamRef> params() {
    std::vector<ParamRef> p;
    for (auto& l : layers_) {
      if (l.has_input_norm) {
        p.push_back({&l.input_norm.gamma, &l.input_norm.gamma_grad, false, false, l.name + ".in_gamma"});
        p.push_back({&l.input_norm.beta, &l.input_norm.beta_grad, false, false, l.name + ".in_beta"});
      }
      p.push_back({&l.weight, &l.weight_grad, l.binary(), !l.binary(), l.name + ".weight"});
      if (l.has_norm) {
        p.push_back({&l.norm.gamma, &l.norm.gamma_grad, false, false, l.name + ".gamma"});
        p.push_back({&l.norm.beta, &l.norm.beta_grad, false, false, l.name + ".beta"});
      }
      if (l.has_prelu) p.push_back({&l.slope, &l.slope_grad, false, false, l.name + ".slope"});
    }
    return p;
  }

  void zero_grad() {
    for (auto& p : params()) *p.grad = FloatTensor();
  }

  // Drops packed weights loaded from disk so the latents drive the layer again.
  void thaw() {
    for (auto& l : layers_) l.frozen.reset();
  }

 private:
  Graph<float>::Var trace_impl(Graph<float>& g, const FloatTensor& x, BnMode mode, bool bind_grads) {
    if (x.c() != 3 || x.h() != cfg_.height || x.w() != cfg_.width || x.n() == 0)
      throw DimensionError("model input " + shape_str(x.shape()) + ", expected (N,3," +
                           std::to_string(cfg_.height) + "," + std::to_string(cfg_.width) + ")");
    using Var = Graph<float>::Var;
    auto param = [&](FloatTensor& v, FloatTensor& grad) {
      return g.param(v, bind_grads ? &grad : nullptr);
    };
    auto norm = [&](Var h, NormParams& n) {
      const Var gm = param(n.gamma, n.gamma_grad), bt = param(n.beta, n.beta_grad);
      if (mode == BnMode::kInference) return g.batchnorm(h, gm, bt, n.running);
      return g.batchnorm(h, gm, bt, mode, &n.running);
    };
    auto unit = [&](std::size_t i, Var h) {
      ConvLayer& l = layers_[i];
      if (l.has_input_norm) h = norm(h, l.input_norm);
      const Var w = param(l.weight, l.weight_grad);
      h = l.binary() ? g.binary_conv(h, w, l.spec, l.bases, cfg_.activation_scaling, l.frozen)
                     : g.conv(h, w, l.spec);
      if (l.has_norm) h = norm(h, l.norm);
      if (l.has_prelu) h = g.prelu(h, param(l.slope, l.slope_grad));
      return h;
    };

    Var h = g.input(x);
    std::size_t i = 0;
    h = unit(i++, h);
    Var skip{};
    for (std::size_t s = 0; s < 3; ++s) {
      h = unit(i++, h);
      h = unit(i++, h);
      if (s == 0) skip = h;
    }
    Var cat{};
    for (std::size_t r = 0; r < cfg_.dilations.size(); ++r) {
      const Var b = unit(i++, h);
      cat = r == 0 ? b : g.concat(cat, b);
    }
    h = unit(i++, cat);
    h = g.upsample(h, 4);
    h = g.concat(h, skip);
    h = unit(i++, h);
    h = g.upsample(h, 2);
    return unit(i++, h);
  }

  ModelConfig cfg_;
  std::vector<ConvLayer> layers_;
};

inline Model build_model(const ModelConfig& cfg) { return Model(cfg); }

// Per-pixel argmax over the two class logits; ties go to background (0).
inline std::vector<std::uint8_t> predict_mask(const FloatTensor& logits) {
  if (logits.c() != 2) throw DimensionError("predict_mask: logits must have 2 channels");
  const std::size_t px = logits.h() * logits.w();
  std::vector<std::uint8_t> m(logits.n() * px);
  for (std::size_t n = 0; n < logits.n(); ++n) {
    const auto s = logits.sample(n);
    for (std::size_t i = 0; i < px; ++i) m[n * px + i] = s[px + i] > s[i] ? 1 : 0;
  }
  return m;
}

// ------------------------------------------------------------ serialization
//
// "BDAD" | u8 version=1 | u8 kind | u64 len | config text | layer records.
// Layer record, in graph order:
//   u64 conv kind (0 float, 1 binary)
//   float:  f32[] weights
//   binary: u64 M, then per base f32[] alpha + packed bits; checkpoints add
//           f32[] latent weights
//   [input BN f32[4*C_in]] [BN f32[4*C_out]] [PReLU f32[C_out]]
// f32[] is a u64 element count followed by little-endian floats; BN arrays
// are gamma, beta, running mean, running var.

enum class FileKind : std::uint8_t { kInference = 0, kCheckpoint = 1 };

inline constexpr char kModelMagic[4] = {'B', 'D', 'A', 'D'};
inline constexpr std::uint8_t kModelVersion = 1;

inline std::size_t model_header_size(const ModelConfig& cfg) {
  return 4 + 1 + 1 + 8 + cfg.to_text().size();
}

namespace detail {

inline void write_norm(io::ByteWriter& w, const NormParams& n) {
  std::vector<float> v;
  v.insert(v.end(), n.gamma.vec().begin(), n.gamma.vec().end());
  v.insert(v.end(), n.beta.vec().begin(), n.beta.vec().end());
  v.insert(v.end(), n.running.mean.begin(), n.running.mean.end());
  v.insert(v.end(), n.running.var.begin(), n.running.var.end());
  w.put_f32_array(v);
}

inline void read_norm(io::ByteReader& r, NormParams& n) {
  const std::size_t c = n.channels();
  const auto v = r.get_f32_array(4 * c);
  for (std::size_t i = 0; i < c; ++i) {
    n.gamma[i] = v[i];
    n.beta[i] = v[c + i];
    n.running.mean[i] = v[2 * c + i];
    n.running.var[i] = v[3 * c + i];
  }
}

}  // namespace detail

inline std::string serialize_model(const Model& m, FileKind kind = FileKind::kInference) {
  io::ByteWriter w;
  w.put_bytes(std::string_view(kModelMagic, 4));
  w.put_u8(kModelVersion);
  w.put_u8(static_cast<std::uint8_t>(kind));
  const std::string cfg = m.config().to_text();
  w.put_u64(cfg.size());
  w.put_bytes(cfg);
  for (const auto& l : m.layers()) {
    w.put_u64(l.binary() ? 1 : 0);
    if (!l.binary()) {
      w.put_f32_array(l.weight.vec());
    } else {
      const auto f = l.filter();
      w.put_u64(f.count());
      for (const auto& b : f.bases) {
        w.put_f32_array(b.alpha);
        write_bits(w, b.bits);
      }
      if (kind == FileKind::kCheckpoint) w.put_f32_array(l.weight.vec());
    }
    if (l.has_input_norm) detail::write_norm(w, l.input_norm);
    if (l.has_norm) detail::write_norm(w, l.norm);
    if (l.has_prelu) w.put_f32_array(l.slope.vec());
  }
  return w.bytes();
}

inline Model deserialize_model(std::string_view data) {
  io::ByteReader r(data);
  if (data.size() < 4 || data.substr(0, 4) != std::string_view(kModelMagic, 4))
    throw FormatError("model file: bad magic, expected BDAD", 0);
  r.get_bytes(4);
  const std::size_t version_at = r.offset();
  if (const auto v = r.get_u8(); v != kModelVersion)
    throw FormatError("model file: unsupported version " + std::to_string(v), version_at);
  const std::size_t kind_at = r.offset();
  const auto kind_byte = r.get_u8();
  if (kind_byte > 1)
    throw FormatError("model file: unknown kind " + std::to_string(kind_byte), kind_at);
  const auto kind = static_cast<FileKind>(kind_byte);
  const std::size_t cfg_at = r.offset();
  const auto cfg_len = r.get_u64();
  if (cfg_len > data.size()) throw FormatError("model file: config block too long", cfg_at);
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_text(r.get_bytes(cfg_len));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("model file: bad config block: ") + e.what(), cfg_at);
  }

  Model m(cfg);
  for (auto& l : m.layers()) {
    const std::size_t at = r.offset();
    const auto conv_kind = r.get_u64();
    if (conv_kind != (l.binary() ? 1u : 0u))
      throw FormatError("model file: layer " + l.name + " kind does not match config", at);
    if (!l.binary()) {
      l.weight = FloatTensor(l.spec.weight_shape(), r.get_f32_array(l.weight.size()));
    } else {
      const std::size_t m_at = r.offset();
      const auto count = r.get_u64();
      if (count != l.bases)
        throw FormatError("model file: layer " + l.name + " has " + std::to_string(count) +
                              " bases, config says " + std::to_string(l.bases),
                          m_at);
      auto f = std::make_shared<MultiBaseFilter>();
      f->channels = l.spec.out_channels;
      f->fan_in = l.spec.fan_in();
      for (std::size_t b = 0; b < count; ++b) {
        BinaryBase base;
        base.alpha = r.get_f32_array(f->channels);
        base.shift.assign(f->channels, 0.0f);
        base.bits = read_bits(r, f->channels, f->fan_in);
        f->bases.push_back(std::move(base));
      }
      if (kind == FileKind::kCheckpoint) {
        l.weight = FloatTensor(l.spec.weight_shape(), r.get_f32_array(l.weight.size()));
      } else {
        l.weight = reconstruct<float>(*f, l.spec.weight_shape());
        l.frozen = std::move(f);
      }
    }
    if (l.has_input_norm) detail::read_norm(r, l.input_norm);
    if (l.has_norm) detail::read_norm(r, l.norm);
    if (l.has_prelu)
      l.slope = FloatTensor({1, l.spec.out_channels, 1, 1}, r.get_f32_array(l.spec.out_channels));
  }
  if (!r.at_end()) throw FormatError("model file: trailing bytes", r.offset());
  return m;
}

inline void save_model(const Model& m, const std::filesystem::path& path,
                       FileKind kind = FileKind::kInference) {
  write_file(path, serialize_model(m, kind));
}

inline Model load_model(const std::filesystem::path& path) {
  return deserialize_model(read_file(path));
}

}  // namespace bitseg
