#pragma once

// Static cost accounting: float MACs, binary ops (one XNOR + popcount lane
// position per MAC it replaces), parameter bits and serialized bytes per
// layer, plus compression/speedup against the all-float twin.
//
// size_bytes reproduces the model-file record layout exactly (see dadnet.hpp),
// so a saved file is model_header_size() + sum of size_bytes.

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "bitseg/bitcore.hpp"
#include "bitseg/conv.hpp"
#include "bitseg/dadnet.hpp"
#include "bitseg/error.hpp"

namespace bitseg {

struct CostModel {
  double bitop_per_mac = 1.0 / 64;  // 1/8 for the energy reading

  void validate() const {
    if (!(bitop_per_mac > 0 && bitop_per_mac <= 1))
      throw ConfigError("bitop_per_mac must lie in (0, 1]");
  }
};

// One conv unit as the counter sees it.
struct LayerDesc {
  std::string name;
  ConvSpec spec;
  std::size_t out_h = 0, out_w = 0;
  std::size_t bases = 1;
  bool input_norm = false, norm = false, prelu = false;
};

struct LayerEntry {
  std::string name;
  std::string kind;  // "float" or "binary"
  std::uint64_t float_macs = 0;
  std::uint64_t binary_ops = 0;
  std::uint64_t param_bits = 0;
  std::uint64_t size_bytes = 0;
  std::uint64_t elementwise_ops = 0;  // BN/PReLU outputs, excluded from MACs
};

inline LayerEntry count_layer(const LayerDesc& d) {
  const ConvSpec& s = d.spec;
  const std::uint64_t co = s.out_channels, ci = s.in_channels, n = s.fan_in();
  const std::uint64_t positions = static_cast<std::uint64_t>(d.out_h) * d.out_w;
  const std::uint64_t products = co * positions * n;
  const std::uint64_t m = d.bases;
  LayerEntry e;
  e.name = d.name;
  e.kind = s.binary ? "binary" : "float";
  std::uint64_t bytes = 8;  // conv kind tag
  if (s.binary) {
    e.binary_ops = m * products;
    e.param_bits = m * (co * n + 32 * co);
    bytes += 8 + m * ((8 + 4 * co) + (16 + 8 * co * words_for(n)));
  } else {
    e.float_macs = products;
    e.param_bits = 32 * co * n;
    bytes += 8 + 4 * co * n;
  }
  if (d.input_norm) {
    e.param_bits += 32 * 4 * ci;
    bytes += 8 + 16 * ci;
  }
  if (d.norm) {
    e.param_bits += 32 * 4 * co;
    bytes += 8 + 16 * co;
    e.elementwise_ops += co * positions;
  }
  if (d.prelu) {
    e.param_bits += 32 * co;
    bytes += 8 + 4 * co;
    e.elementwise_ops += co * positions;
  }
  e.size_bytes = bytes;
  return e;
}

struct ComplexityReport {
  std::vector<LayerEntry> layers;
  LayerEntry total;
  std::uint64_t baseline_bytes = 0;  // all-float twin
  std::uint64_t baseline_macs = 0;
  std::uint64_t header_bytes = 0;    // fixed model-file overhead

  double effective_macs(const CostModel& cm) const {
    return static_cast<double>(total.float_macs) +
           static_cast<double>(total.binary_ops) * cm.bitop_per_mac;
  }
  double compression() const {
    return static_cast<double>(baseline_bytes) / static_cast<double>(total.size_bytes);
  }
};

inline ComplexityReport count_layers(const std::vector<LayerDesc>& descs) {
  ComplexityReport r;
  r.total.name = "total";
  r.total.kind = "-";
  for (const auto& d : descs) {
    const LayerEntry e = count_layer(d);
    r.total.float_macs += e.float_macs;
    r.total.binary_ops += e.binary_ops;
    r.total.param_bits += e.param_bits;
    r.total.size_bytes += e.size_bytes;
    r.total.elementwise_ops += e.elementwise_ops;
    LayerDesc twin = d;
    twin.spec.binary = false;
    twin.bases = 1;
    const LayerEntry f = count_layer(twin);
    r.baseline_bytes += f.size_bytes;
    r.baseline_macs += f.float_macs;
    r.layers.push_back(e);
  }
  return r;
}

inline std::vector<LayerDesc> describe(const Model& m) {
  std::vector<LayerDesc> out;
  const auto sizes = m.layer_input_sizes();
  for (std::size_t i = 0; i < m.layers().size(); ++i) {
    const auto& l = m.layers()[i];
    LayerDesc d;
    d.name = l.name;
    d.spec = l.spec;
    d.out_h = l.spec.out_h(sizes[i].first);
    d.out_w = l.spec.out_w(sizes[i].second);
    d.bases = l.binary() ? l.bases : 1;
    d.input_norm = l.has_input_norm;
    d.norm = l.has_norm;
    d.prelu = l.has_prelu;
    out.push_back(std::move(d));
  }
  return out;
}

inline ComplexityReport count_model(const Model& m) {
  ComplexityReport r = count_layers(describe(m));
  r.header_bytes = model_header_size(m.config());
  return r;
}

inline ComplexityReport count_model(const ModelConfig& cfg) { return count_model(Model(cfg)); }

// Baseline float MACs over effective MACs under the cost model.
inline double cost_model_apply(const ComplexityReport& r, const CostModel& cm) {
  cm.validate();
  const double eff = r.effective_macs(cm);
  return eff > 0 ? static_cast<double>(r.baseline_macs) / eff : 1.0;
}

inline std::string complexity_csv(const ComplexityReport& r) {
  std::string s = "layer,kind,float_macs,binary_ops,param_bits,size_bytes\n";
  auto row = [&](const LayerEntry& e) {
    s += e.name + "," + e.kind + "," + std::to_string(e.float_macs) + "," +
         std::to_string(e.binary_ops) + "," + std::to_string(e.param_bits) + "," +
         std::to_string(e.size_bytes) + "\n";
  };
  for (const auto& e : r.layers) row(e);
  row(r.total);
  return s;
}

inline std::string complexity_table(const ComplexityReport& r, const CostModel& cm) {
  std::string s;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-12s %-7s %14s %14s %12s %11s\n", "layer", "kind",
                "float_macs", "binary_ops", "param_bits", "size_bytes");
  s += buf;
  auto row = [&](const LayerEntry& e) {
    std::snprintf(buf, sizeof buf, "%-12s %-7s %14llu %14llu %12llu %11llu\n", e.name.c_str(),
                  e.kind.c_str(), static_cast<unsigned long long>(e.float_macs),
                  static_cast<unsigned long long>(e.binary_ops),
                  static_cast<unsigned long long>(e.param_bits),
                  static_cast<unsigned long long>(e.size_bytes));
    s += buf;
  };
  for (const auto& e : r.layers) row(e);
  row(r.total);
  std::snprintf(buf, sizeof buf,
                "elementwise ops (BN/PReLU, not in MACs): %llu\n"
                "file bytes: %llu (header %llu)\n"
                "float twin bytes: %llu  compression: %.2fx\n"
                "effective MACs at %.6g MAC/bitop: %.0f  speedup: %.2fx\n",
                static_cast<unsigned long long>(r.total.elementwise_ops),
                static_cast<unsigned long long>(r.header_bytes + r.total.size_bytes),
                static_cast<unsigned long long>(r.header_bytes),
                static_cast<unsigned long long>(r.baseline_bytes), r.compression(),
                cm.bitop_per_mac, r.effective_macs(cm), cost_model_apply(r, cm));
  s += buf;
  return s;
}

}  // namespace bitseg
