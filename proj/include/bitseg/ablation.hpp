#pragma once

// Binarization placement x multi-base grid. Each cell trains a fresh model
// from the same seeds and scene split, so rows differ only in the placement
// and M. An all-float control row is emitted first.

#include <cstddef>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "bitseg/complexity.hpp"
#include "bitseg/config.hpp"
#include "bitseg/dadnet.hpp"
#include "bitseg/scenes.hpp"
#include "bitseg/trainer.hpp"

namespace bitseg {

enum class Placement { kNone, kEncoder, kDecoder, kBottleneck, kFull };

inline const char* placement_name(Placement p) {
  switch (p) {
    case Placement::kNone: return "float";
    case Placement::kEncoder: return "encoder";
    case Placement::kDecoder: return "decoder";
    case Placement::kBottleneck: return "bottleneck";
    case Placement::kFull: return "full";
  }
  return "?";
}

inline ModelConfig with_placement(ModelConfig c, Placement p, std::size_t bases) {
  c.binarize_encoder = p == Placement::kEncoder || p == Placement::kFull;
  c.binarize_decoder = p == Placement::kDecoder || p == Placement::kFull;
  c.binarize_bottleneck = p == Placement::kBottleneck || p == Placement::kFull;
  c.multi_base = bases;
  return c;
}

struct AblationCell {
  Placement placement = Placement::kFull;
  std::size_t bases = 1;
};

// Control row followed by {encoder, decoder, bottleneck, full} x {M=1, M=2}.
inline std::vector<AblationCell> ablation_cells() {
  std::vector<AblationCell> cells{{Placement::kNone, 1}};
  for (auto p : {Placement::kEncoder, Placement::kDecoder, Placement::kBottleneck, Placement::kFull})
    for (std::size_t m : {1u, 2u}) cells.push_back({p, m});
  return cells;
}

struct AblationRow {
  std::string placement;
  std::size_t bases = 1;
  std::uint64_t size_bytes = 0;  // whole model file
  double effective_macs = 0.0;
  double road_iou = 0.0;
  double compression = 1.0;
};

inline std::string ablation_csv_header() {
  return "placement,M,size_bytes,effective_macs,road_iou,compression";
}

inline std::string ablation_csv_row(const AblationRow& r) {
  char buf[192];
  std::snprintf(buf, sizeof buf, "%s,%zu,%llu,%.1f,%.6f,%.4f", r.placement.c_str(), r.bases,
                static_cast<unsigned long long>(r.size_bytes), r.effective_macs, r.road_iou,
                r.compression);
  return buf;
}

inline AblationRow run_cell(const CliConfig& base, const AblationCell& cell, const Dataset& train_set,
                            const Dataset& eval_set) {
  Model m(with_placement(base.model, cell.placement, cell.bases));
  train(m, train_set, eval_set, base.train);
  const auto report = count_model(m);
  AblationRow r;
  r.placement = placement_name(cell.placement);
  r.bases = cell.bases;
  r.size_bytes = report.header_bytes + report.total.size_bytes;
  r.effective_macs = report.effective_macs(base.cost);
  r.road_iou = evaluate(m, eval_set).iou_road;
  r.compression = report.compression();
  return r;
}

inline std::vector<AblationRow> ablation_grid(
    const CliConfig& base, const std::function<void(const AblationRow&)>& on_row = {}) {
  base.validate();
  const Dataset all = make_dataset(base.scenes, base.train_scenes + base.eval_scenes);
  const Dataset tr = slice(all, 0, base.train_scenes);
  const Dataset ev = slice(all, base.train_scenes, all.size());
  std::vector<AblationRow> rows;
  for (const auto& cell : ablation_cells()) {
    rows.push_back(run_cell(base, cell, tr, ev));
    if (on_row) on_row(rows.back());
  }
  return rows;
}

}  // namespace bitseg
