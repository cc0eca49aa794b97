// protoscale: dataset generation, training and evaluation.
//
//   protoscale generate --count 512 --out data --seed 7
//   protoscale train --config run.cfg --data data --out runs/a
//   protoscale eval --ckpt runs/a/latest.bin --data data --out runs/a/eval --export-maps
//
// Exit codes: 0 ok, 2 usage/config error, 3 I/O error, 4 non-finite loss,
// 5 checkpoint CRC mismatch.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "protoscale/checkpoint.hpp"
#include "protoscale/config.hpp"
#include "protoscale/eval.hpp"
#include "protoscale/scenegen.hpp"
#include "protoscale/trainer.hpp"

namespace fs = std::filesystem;
using namespace protoscale;

namespace {

enum Exit { kOk = 0, kConfig = 2, kIo = 3, kNonFinite = 4, kCrc = 5 };

RunConfig apply_overrides(const std::string& text, const std::vector<std::string>& sets) {
  RunConfig cfg = RunConfig::parse(text);
  for (const auto& s : sets) cfg.set(s);
  cfg.validate();
  return cfg;
}

int run_generate(std::size_t count, const fs::path& out, std::uint64_t seed, std::size_t size, double val_fraction) {
  SceneConfig cfg;
  cfg.size = size;
  const Manifest m = write_dataset(count, cfg, seed, out, val_fraction);
  std::cout << "wrote " << m.entries.size() << " scenes to " << out.string() << "\n";
  return kOk;
}

int run_train(const std::optional<fs::path>& config, const std::vector<std::string>& sets, const fs::path& data,
              const fs::path& out, const std::optional<fs::path>& resume) {
  std::string text;
  if (config) {
    std::ifstream in(*config);
    if (!in) throw IoError("cannot open config " + config->string());
    text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  const RunConfig cfg = apply_overrides(text, sets);
  const Manifest manifest = read_manifest(data);
  if (manifest.size != cfg.model.encoder.input_size) {
    throw ConfigError("dataset size " + std::to_string(manifest.size) + " does not match model.input_size " +
                      std::to_string(cfg.model.encoder.input_size));
  }
  const TrainSummary s = train_loop(cfg, data, out, resume, [](const std::string& line) { std::cout << line << "\n" << std::flush; });
  if (s.first_step == s.final_step) std::cout << "nothing to do: checkpoint already at step " << s.final_step << "\n";
  std::cout << "latest checkpoint: " << s.latest.string() << "\n";
  return kOk;
}

int run_eval(const fs::path& ckpt, const fs::path& data, const fs::path& out, bool export_maps, std::size_t export_count,
             const std::string& split) {
  const auto records = load_records(ckpt);
  const RunConfig cfg = RunConfig::parse(checkpoint_config_text(records));
  const TrainState state = load_checkpoint(ckpt, cfg);

  const Manifest manifest = read_manifest(data);
  std::vector<Scene> scenes;
  for (auto i : manifest.split_indices(split)) scenes.push_back(load_scene(data, manifest.entries[i]));
  if (scenes.empty()) throw ConfigError("dataset has no '" + split + "' scenes");

  MetricsReport report = evaluate(state.teacher, scenes);
  report.step = state.step;

  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  {
    std::ofstream json(out / "metrics.json", std::ios::trunc);
    json << report.to_json();
    if (!json) throw IoError("write failed for " + (out / "metrics.json").string());
  }
  const fs::path csv = out / "metrics.csv";
  const bool fresh = !fs::exists(csv);
  std::ofstream rows(csv, std::ios::app);
  if (fresh) rows << MetricsReport::csv_header() << "\n";
  rows << report.csv_row() << "\n";
  if (!rows) throw IoError("write failed for " + csv.string());

  if (export_maps) {
    NoGradGuard no_grad;
    std::size_t files = 0;
    for (std::size_t i = 0; i < std::min(export_count, scenes.size()); ++i) {
      const NetworkOutput o = state.teacher.forward(stack_images({scenes[i].image}));
      char dir[48];
      std::snprintf(dir, sizeof dir, "maps/scene_%05zu", i);
      files += export_attention_images(o.scales, scenes[i].image, out / dir);
    }
    std::cout << "exported " << files << " attention images\n";
  }
  std::cout << report.to_json();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prototype-based multi-scale grouping: data generation, training, evaluation"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "Write a synthetic scene dataset");
  std::size_t count = 0, size = 64;
  std::uint64_t seed = 0;
  double val_fraction = 0.125;
  fs::path gen_out;
  gen->add_option("--count", count, "Number of scenes")->required();
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", seed, "Master seed");
  gen->add_option("--size", size, "Canvas size in pixels");
  gen->add_option("--val-fraction", val_fraction, "Fraction of scenes in the validation split");

  auto* train = app.add_subcommand("train", "Train student and EMA teacher");
  std::optional<fs::path> config, resume;
  std::vector<std::string> sets;
  fs::path train_data, train_out;
  train->add_option("--config", config, "Config file (key = value with [sections])");
  train->add_option("--set", sets, "Override, e.g. --set train.steps=100");
  train->add_option("--data", train_data, "Dataset directory")->required();
  train->add_option("--out", train_out, "Run directory")->required();
  train->add_option("--resume", resume, "Checkpoint to continue from");

  auto* ev = app.add_subcommand("eval", "Score a checkpoint's teacher on a dataset split");
  fs::path ckpt, eval_data, eval_out;
  bool export_maps = false;
  std::size_t export_count = 1;
  std::string split = "val";
  ev->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  ev->add_option("--data", eval_data, "Dataset directory")->required();
  ev->add_option("--out", eval_out, "Output directory")->required();
  ev->add_flag("--export-maps", export_maps, "Write attention maps as images");
  ev->add_option("--export-count", export_count, "Scenes to export maps for");
  ev->add_option("--split", split, "Dataset split")->check(CLI::IsMember({"train", "val"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return run_generate(count, gen_out, seed, size, val_fraction);
    if (*train) return run_train(config, sets, train_data, train_out, resume);
    return run_eval(ckpt, eval_data, eval_out, export_maps, export_count, split);
  } catch (const CorruptCheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCrc;
  } catch (const NonFiniteLossError& e) {
    std::cerr << "error: training aborted, " << e.what() << "\n";
    return kNonFinite;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  }
}
