// fvl — desk-scale FVAE-LoRA lab: data generation, training, evaluation,
// verification suites, repulsion probes and report aggregation.

#include <CLI11.hpp>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "fvae/config.hpp"
#include "fvae/experiment.hpp"
#include "fvae/report.hpp"
#include "fvae/verify.hpp"

namespace fs = std::filesystem;
using namespace fvae;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;   // verification / experiment failure
constexpr int kExitUsage = 2;     // usage or config error

std::vector<uint64_t> parse_seeds(const std::string& spec) {
  std::vector<uint64_t> seeds;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      seeds.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError("--seed: '" + item + "' is not an integer");
    }
  }
  if (seeds.empty()) throw ConfigError("--seed: no seeds given");
  return seeds;
}

ExperimentConfig load_config(const std::string& path,
                             const std::string& variant,
                             const std::string& out_dir) {
  ExperimentConfig cfg =
      path.empty() ? ExperimentConfig() : ExperimentConfig::from_file(path);
  if (!variant.empty()) cfg.adapter.variant = adapter_variant_from(variant);
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  cfg.finalize();
  return cfg;
}

unsigned sweep_threads(size_t jobs) {
  unsigned cap = std::thread::hardware_concurrency();
  if (cap == 0) cap = 1;
  if (const char* env = std::getenv("FVL_THREADS")) {
    try {
      const unsigned v = static_cast<unsigned>(std::stoul(env));
      if (v >= 1) cap = v;
    } catch (const std::exception&) {
      throw ConfigError("FVL_THREADS must be a positive integer");
    }
  }
  return static_cast<unsigned>(std::min<size_t>(cap, jobs));
}

std::string run_dir_for(const ExperimentConfig& cfg, uint64_t seed,
                        bool sweep) {
  if (!sweep) return cfg.output_dir;
  return (fs::path(cfg.output_dir) / ("seed_" + std::to_string(seed))).string();
}

// Runs one experiment per seed, in parallel up to the thread cap; each run
// writes to its own directory.
int run_sweep(const ExperimentConfig& cfg, const std::vector<uint64_t>& seeds,
              bool record_probe) {
  const bool sweep = seeds.size() > 1;
  std::vector<std::string> errors(seeds.size());
  std::vector<RunResult> results(seeds.size());
  std::atomic<size_t> next{0};

  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= seeds.size()) return;
      try {
        results[i] = run_experiment(cfg, seeds[i],
                                    run_dir_for(cfg, seeds[i], sweep),
                                    record_probe);
        if (record_probe) {
          std::ofstream svg(fs::path(results[i].run_dir) / "probe.svg",
                            std::ios::trunc);
          svg << probe_svg(results[i].probe);
        }
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };

  const unsigned n_threads = sweep_threads(seeds.size());
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  bool failed = false;
  for (size_t i = 0; i < seeds.size(); ++i) {
    if (!errors[i].empty()) {
      std::cerr << "seed " << seeds[i] << ": " << errors[i] << "\n";
      failed = true;
      continue;
    }
    const auto& m = results[i].final_eval;
    std::printf("seed %llu: wg=%.4f avg=%.4f disparity=%.4f -> %s\n",
                static_cast<unsigned long long>(seeds[i]), m.wg, m.avg,
                m.disparity, results[i].run_dir.c_str());
  }
  return failed ? kExitFailure : kExitOk;
}

GroupedDataset load_dataset_file(const std::string& path) {
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0)
    return read_dataset_csv(path);
  return read_dataset_binary(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fvl: FVAE-LoRA adapters, analytics and the synthetic "
               "spurious-correlation benchmark"};
  app.require_subcommand(1);

  std::string config_path, out_dir, variant, seed_spec;
  std::string checkpoint_path, data_path;
  std::string suite = "all", fault;
  std::vector<std::string> run_dirs;

  auto* gendata = app.add_subcommand("gendata", "generate a benchmark dataset");
  gendata->add_option("--config", config_path, "experiment config (JSON)");
  gendata->add_option("--out", out_dir, "output directory");

  auto* train = app.add_subcommand("train", "train a variant on the benchmark");
  train->add_option("--config", config_path, "experiment config (JSON)");
  train->add_option("--seed", seed_spec, "seed or comma-separated seed list");
  train->add_option("--variant", variant,
                    "adapter variant: lora|fvae|vae2lat|beta_vae2lat");
  train->add_option("--out", out_dir, "output directory");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")
      ->required();
  eval->add_option("--data", data_path, "dataset file (.fvl or .csv)")
      ->required();

  auto* verify = app.add_subcommand("verify", "run the verification suites");
  verify->add_option("--suite", suite, "all|gradcheck|analytics|identities");
  verify->add_option("--inject-fault", fault,
                     "debug hook: delta-sign flips the discrepancy sign");

  auto* probe = app.add_subcommand(
      "gamma-probe", "train while recording per-step repulsion quantities");
  probe->add_option("--config", config_path, "experiment config (JSON)");
  probe->add_option("--seed", seed_spec, "seed or comma-separated seed list");
  probe->add_option("--variant", variant, "adapter variant");
  probe->add_option("--out", out_dir, "output directory");

  auto* report = app.add_subcommand("report", "aggregate run directories");
  report->add_option("dirs", run_dirs, "run directories")->required();
  report->add_option("--out", out_dir, "report output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gendata->parsed()) {
      ExperimentConfig cfg = load_config(config_path, "", out_dir);
      auto [train_ds, test_ds] = generate_spurious(cfg.dataset);
      fs::create_directories(cfg.output_dir);
      const fs::path dir(cfg.output_dir);
      write_dataset_csv(train_ds, (dir / "train.csv").string());
      write_dataset_csv(test_ds, (dir / "test.csv").string());
      write_dataset_binary(train_ds, (dir / "train.fvl").string());
      write_dataset_binary(test_ds, (dir / "test.fvl").string());
      std::printf("wrote %zu train / %zu test examples to %s\n",
                  train_ds.size(), test_ds.size(), cfg.output_dir.c_str());
      return kExitOk;
    }

    if (train->parsed() || probe->parsed()) {
      ExperimentConfig cfg = load_config(config_path, variant, out_dir);
      std::vector<uint64_t> seeds = seed_spec.empty()
                                        ? std::vector<uint64_t>{cfg.train.seed}
                                        : parse_seeds(seed_spec);
      return run_sweep(cfg, seeds, probe->parsed());
    }

    if (eval->parsed()) {
      LoadedCheckpoint loaded = load_checkpoint_model(checkpoint_path);
      GroupedDataset ds = load_dataset_file(data_path);
      GroupMetricsResult m = evaluate(loaded.model, ds);
      char buf[160];
      std::printf("acc,wg,avg,disparity\n");
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g\n", m.avg, m.wg,
                    m.avg, m.disparity);
      std::fputs(buf, stdout);
      return kExitOk;
    }

    if (verify->parsed()) {
      FaultInjection fi = FaultInjection::None;
      if (fault == "delta-sign")
        fi = FaultInjection::DeltaSign;
      else if (!fault.empty())
        throw ConfigError("--inject-fault: unknown fault '" + fault + "'");
      const auto checks = run_verify_suites(suite, fi);
      for (const auto& c : checks)
        std::printf("[%s] %-42s %s\n", c.pass ? "PASS" : "FAIL",
                    c.name.c_str(), c.detail.c_str());
      const bool ok = all_pass(checks);
      std::printf("%zu checks, %s\n", checks.size(), ok ? "all passed" : "FAILURES");
      return ok ? kExitOk : kExitFailure;
    }

    if (report->parsed()) {
      const std::string dest = out_dir.empty() ? "." : out_dir;
      const auto summary = write_report(run_dirs, dest);
      for (const auto& s : summary)
        std::printf("%-14s runs=%d wg=%.4f+/-%.4f avg=%.4f+/-%.4f "
                    "disparity=%.4f+/-%.4f\n",
                    s.variant.c_str(), s.runs, s.wg_mean, s.wg_std, s.avg_mean,
                    s.avg_std, s.disparity_mean, s.disparity_std);
      std::printf("report written to %s/report.md\n", dest.c_str());
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
