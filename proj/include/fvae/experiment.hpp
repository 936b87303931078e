#pragma once

#include <filesystem>
#include <string>
#include <utility>

#include "fvae/config.hpp"
#include "fvae/trainer.hpp"

namespace fvae {

struct RunResult {
  GroupMetricsResult final_eval;
  MetricsLog metrics;
  ProbeLog probe;
  std::string run_dir;
};

// Builds dataset + model from the config, trains with the given seed, and
// (optionally) writes config.json / metrics.csv / checkpoint.fvl / probe.csv
// into run_dir.
inline RunResult run_experiment(ExperimentConfig cfg, uint64_t seed,
                                const std::string& run_dir,
                                bool record_probe = false,
                                bool write_outputs = true) {
  if (write_outputs && run_dir.empty())
    throw ConfigError("run_experiment: no output directory");
  cfg.train.seed = seed;
  if (!run_dir.empty()) cfg.output_dir = run_dir;
  cfg.finalize();

  auto [train_ds, test_ds] = generate_spurious(cfg.dataset);
  Model model = Model::build(cfg.model, cfg.adapter, seed);
  const std::string snapshot = cfg.to_json().dump(2);
  Trainer trainer(model, train_ds, test_ds, cfg.train, snapshot, record_probe);
  trainer.run();

  RunResult r;
  r.final_eval = evaluate(model, test_ds);
  r.metrics = trainer.metrics();
  r.probe = trainer.probe();
  r.run_dir = run_dir;

  if (write_outputs) {
    namespace fs = std::filesystem;
    fs::create_directories(run_dir);
    std::ofstream cfg_out(run_dir + "/config.json", std::ios::trunc);
    cfg_out << snapshot << '\n';
    r.metrics.write(run_dir + "/metrics.csv");
    trainer.save_checkpoint(run_dir + "/checkpoint.fvl");
    if (record_probe) r.probe.write(run_dir + "/probe.csv");
  }
  return r;
}

struct LoadedCheckpoint {
  ExperimentConfig config;
  Model model;
};

// Rebuilds the model recorded in a checkpoint and restores its parameters.
inline LoadedCheckpoint load_checkpoint_model(const std::string& path) {
  Container c = Container::read(path);
  json doc;
  try {
    doc = json::parse(c.config_json);
  } catch (const json::exception& e) {
    throw IoError("checkpoint '" + path +
                  "' has an unreadable config snapshot: " + e.what());
  }
  ExperimentConfig cfg = ExperimentConfig::from_json(doc);
  Model model = Model::build(cfg.model, cfg.adapter, cfg.train.seed);
  for (auto& p : model.params().all()) {
    const auto& e = c.find("param." + p.name);
    if (e.f64.size() != p.size())
      throw IoError("checkpoint: size mismatch for '" + p.name + "'");
    p.value = e.f64;
  }
  return {std::move(cfg), std::move(model)};
}

}  // namespace fvae
