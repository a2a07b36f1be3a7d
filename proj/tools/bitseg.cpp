// bitseg: command-line front end.
//
// Exit codes: 0 ok, 1 unexpected error, 2 config/usage error, 3 data or file
// format error, 4 training diverged, 5 selftest failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "bitseg/ablation.hpp"
#include "bitseg/complexity.hpp"
#include "bitseg/config.hpp"
#include "bitseg/dadnet.hpp"
#include "bitseg/scenes.hpp"
#include "bitseg/selftest.hpp"
#include "bitseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace bitseg;

namespace {

enum Exit { kOk = 0, kUnexpected = 1, kConfig = 2, kData = 3, kDiverged = 4, kSelftest = 5 };

struct Common {
  std::string config = "default";
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "config file of key=value lines, or 'default'");
  cmd->add_option("overrides", c.overrides, "key=value overrides applied after the config file");
}

CliConfig load_config(const Common& c) {
  const std::string text = c.config == "default" ? std::string() : read_file(c.config);
  return parse_config(text, c.overrides);
}

// Data from a generated directory (last eval_scenes entries held out), or
// generated in memory when no directory is given.
void get_split(const CliConfig& cfg, const std::string& dir, Dataset& train_set, Dataset& eval_set) {
  Dataset all = dir.empty() ? make_dataset(cfg.scenes, cfg.train_scenes + cfg.eval_scenes)
                            : load_dataset(dir);
  if (all.size() <= cfg.eval_scenes)
    throw ConfigError("dataset has " + std::to_string(all.size()) +
                      " scenes, need more than eval_scenes=" + std::to_string(cfg.eval_scenes));
  const std::size_t cut = all.size() - cfg.eval_scenes;
  train_set = slice(all, 0, cut);
  eval_set = slice(all, cut, all.size());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Binary dilated segmentation networks on generated road scenes"};
  app.require_subcommand(1);
  app.footer("Configuration keys (key default description):\n" + config_help());

  Common c_gen, c_train, c_eval, c_cx, c_ab;

  auto* gen = app.add_subcommand("gen-data", "write generated scenes, masks and a manifest");
  std::string gen_out;
  std::size_t gen_count = 0;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of scenes (default train_scenes + eval_scenes)");
  add_common(gen, c_gen);

  auto* tr = app.add_subcommand("train", "train a model and save it");
  std::string tr_data, tr_out = "model.bdad", tr_log, tr_ckpt;
  tr->add_option("--data", tr_data, "dataset directory from gen-data (default: generate in memory)");
  tr->add_option("--out", tr_out, "inference model file");
  tr->add_option("--log", tr_log, "per-epoch CSV log (epoch,loss,road_iou)");
  tr->add_option("--checkpoint", tr_ckpt, "also save latent weights here");
  add_common(tr, c_train);

  auto* ev = app.add_subcommand("eval", "evaluate a saved model");
  std::string ev_model, ev_data;
  ev->add_option("--model", ev_model, "model file")->required();
  ev->add_option("--data", ev_data, "dataset directory (default: generated eval split)");
  add_common(ev, c_eval);

  auto* pr = app.add_subcommand("predict", "segment one P6 image into a P5 mask");
  std::string pr_model, pr_image, pr_out;
  pr->add_option("--model", pr_model, "model file")->required();
  pr->add_option("--image", pr_image, "input P6 image")->required();
  pr->add_option("--out", pr_out, "output P5 mask (255 = road)")->required();

  auto* cx = app.add_subcommand("complexity", "print MAC/size accounting as a table and CSV");
  std::string cx_model, cx_csv;
  cx->add_option("--model", cx_model, "count a saved model instead of the configured one");
  cx->add_option("--csv", cx_csv, "write the CSV here instead of stdout");
  add_common(cx, c_cx);

  auto* ab = app.add_subcommand("ablate", "train the binarization placement x M grid");
  std::string ab_out;
  ab->add_option("--out", ab_out, "CSV output (default stdout)");
  add_common(ab, c_ab);

  auto* st = app.add_subcommand("selftest", "kernel equivalence and gradient checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) {
      CliConfig cfg = load_config(c_gen);
      const std::size_t n = gen->count("--count") ? gen_count : cfg.train_scenes + cfg.eval_scenes;
      generate_dataset(cfg.scenes, n, gen_out);
      std::printf("wrote %zu scenes to %s\n", n, gen_out.c_str());
    } else if (*tr) {
      CliConfig cfg = load_config(c_train);
      Dataset train_set, eval_set;
      get_split(cfg, tr_data, train_set, eval_set);
      if (train_set.images.h() != cfg.model.height || train_set.images.w() != cfg.model.width)
        throw DimensionError("dataset scenes are " + std::to_string(train_set.images.h()) + "x" +
                             std::to_string(train_set.images.w()) + ", model expects " +
                             std::to_string(cfg.model.height) + "x" + std::to_string(cfg.model.width));
      Model m(cfg.model);
      const auto t0 = std::chrono::steady_clock::now();
      const auto h = train(m, train_set, eval_set, cfg.train, [&](const EpochRecord& r) {
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::fprintf(stderr, "epoch %zu/%zu loss %.4f road_iou %.4f (%.0fs)\n", r.epoch,
                     cfg.train.epochs, r.loss, r.road_iou, s);
      });
      save_model(m, tr_out);
      if (!tr_ckpt.empty()) save_model(m, tr_ckpt, FileKind::kCheckpoint);
      if (!tr_log.empty()) write_file(tr_log, "epoch,loss,road_iou\n" + h.log());
      std::printf("%s\n%s\n", metrics_csv_header().c_str(),
                  metrics_csv_row("eval", evaluate(m, eval_set)).c_str());
    } else if (*ev) {
      CliConfig cfg = load_config(c_eval);
      const Model m = load_model(ev_model);
      Dataset data;
      if (ev_data.empty()) {
        Dataset unused;
        get_split(cfg, "", unused, data);
      } else {
        data = load_dataset(ev_data);
      }
      std::printf("%s\n%s\n", metrics_csv_header().c_str(),
                  metrics_csv_row("eval", evaluate(m, data)).c_str());
    } else if (*pr) {
      const Model m = load_model(pr_model);
      const FloatTensor x = from_ppm(read_pnm(pr_image));
      const auto mask = predict_mask(m.forward(x));
      write_pnm(pr_out, mask_to_pgm(mask, x.h(), x.w()));
    } else if (*cx) {
      CliConfig cfg = load_config(c_cx);
      const auto report = cx_model.empty() ? count_model(cfg.model) : count_model(load_model(cx_model));
      std::cout << complexity_table(report, cfg.cost) << "\n";
      if (cx_csv.empty())
        std::cout << complexity_csv(report);
      else
        write_file(cx_csv, complexity_csv(report));
    } else if (*ab) {
      CliConfig cfg = load_config(c_ab);
      std::string csv = ablation_csv_header() + "\n";
      if (ab_out.empty()) std::printf("%s", csv.c_str());
      ablation_grid(cfg, [&](const AblationRow& r) {
        csv += ablation_csv_row(r) + "\n";
        if (ab_out.empty()) std::printf("%s\n", ablation_csv_row(r).c_str());
        std::fflush(stdout);
        std::fprintf(stderr, "done %s M=%zu road_iou %.4f\n", r.placement.c_str(), r.bases,
                     r.road_iou);
      });
      if (!ab_out.empty()) write_file(ab_out, csv);
    } else if (*st) {
      bool ok = true;
      for (const auto& r : run_selftest()) {
        std::printf("%s  %s (%s)\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
        ok = ok && r.passed;
      }
      return ok ? kOk : kSelftest;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const ArgumentError& e) {
    std::fprintf(stderr, "argument error: %s\n", e.what());
    return kConfig;
  } catch (const TrainingError& e) {
    std::fprintf(stderr, "training error: %s\n", e.what());
    return kDiverged;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return kData;
  } catch (const DimensionError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUnexpected;
  }
  return kOk;
}
