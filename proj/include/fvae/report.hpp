#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fvae/config.hpp"
#include "fvae/svg.hpp"
#include "fvae/trainer.hpp"

namespace fvae {

struct RunRecord {
  std::string dir;
  std::string variant;
  uint64_t seed = 0;
  double wg = 0.0, avg = 0.0, disparity = 0.0;
  int64_t final_step = 0;
};

namespace report_detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace report_detail

// Reads one training-run directory (config.json + metrics.csv) and extracts
// the final evaluation row.
inline RunRecord read_run_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path cfg_path = fs::path(dir) / "config.json";
  const fs::path metrics_path = fs::path(dir) / "metrics.csv";
  if (!fs::exists(cfg_path) || !fs::exists(metrics_path))
    throw IoError("run dir '" + dir +
                  "' is missing config.json or metrics.csv");

  RunRecord r;
  r.dir = dir;
  {
    std::ifstream in(cfg_path);
    json doc;
    try {
      in >> doc;
    } catch (const json::exception& e) {
      throw IoError("'" + cfg_path.string() + "': " + e.what());
    }
    r.variant = doc.at("adapter").at("variant").get<std::string>();
    r.seed = doc.at("train").at("seed").get<uint64_t>();
  }
  {
    std::ifstream in(metrics_path);
    std::string line;
    if (!std::getline(in, line))
      throw IoError("'" + metrics_path.string() + "': empty file");
    const auto header = report_detail::split_csv_line(line);
    auto col = [&](const char* name) {
      for (size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
      throw IoError("'" + metrics_path.string() + "': no column '" +
                    std::string(name) + "'");
    };
    const size_t c_step = col("step"), c_wg = col("wg"), c_avg = col("avg"),
                 c_disp = col("disparity");
    std::string last;
    while (std::getline(in, line))
      if (!line.empty()) last = line;
    if (last.empty())
      throw IoError("'" + metrics_path.string() + "': no metric rows");
    const auto cells = report_detail::split_csv_line(last);
    r.final_step = std::stoll(cells.at(c_step));
    r.wg = std::stod(cells.at(c_wg));
    r.avg = std::stod(cells.at(c_avg));
    r.disparity = std::stod(cells.at(c_disp));
  }
  return r;
}

struct VariantSummary {
  std::string variant;
  int runs = 0;
  double wg_mean = 0, wg_std = 0;
  double avg_mean = 0, avg_std = 0;
  double disparity_mean = 0, disparity_std = 0;
};

inline std::vector<VariantSummary> summarize_runs(
    const std::vector<RunRecord>& records) {
  std::map<std::string, std::vector<const RunRecord*>> by_variant;
  for (const auto& r : records) by_variant[r.variant].push_back(&r);

  auto mean_std = [](const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    const double sd =
        v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0;
    return std::pair<double, double>{m, sd};
  };

  std::vector<VariantSummary> out;
  for (const auto& [variant, runs] : by_variant) {
    VariantSummary s;
    s.variant = variant;
    s.runs = static_cast<int>(runs.size());
    std::vector<double> wg, avg, disp;
    for (const auto* r : runs) {
      wg.push_back(r->wg);
      avg.push_back(r->avg);
      disp.push_back(r->disparity);
    }
    std::tie(s.wg_mean, s.wg_std) = mean_std(wg);
    std::tie(s.avg_mean, s.avg_std) = mean_std(avg);
    std::tie(s.disparity_mean, s.disparity_std) = mean_std(disp);
    out.push_back(std::move(s));
  }
  return out;
}

inline std::string report_markdown(const std::vector<RunRecord>& records,
                                   const std::vector<VariantSummary>& summary,
                                   const std::string& chart_file) {
  using report_detail::fmt;
  std::ostringstream out;
  out << "# Benchmark report\n\n";
  out << "Aggregated worst-group / average accuracy on the synthetic "
         "spurious-correlation benchmark (mean +/- std over seeds).\n\n";
  out << "| variant | runs | WG | AVG | disparity |\n";
  out << "|---|---:|---|---|---|\n";
  for (const auto& s : summary)
    out << "| " << s.variant << " | " << s.runs << " | " << fmt(s.wg_mean)
        << " +/- " << fmt(s.wg_std) << " | " << fmt(s.avg_mean) << " +/- "
        << fmt(s.avg_std) << " | " << fmt(s.disparity_mean) << " +/- "
        << fmt(s.disparity_std) << " |\n";
  out << "\n![metrics](" << chart_file << ")\n";
  out << "\n## Runs\n\n";
  out << "| dir | variant | seed | final step | WG | AVG | disparity |\n";
  out << "|---|---|---:|---:|---|---|---|\n";
  for (const auto& r : records)
    out << "| " << r.dir << " | " << r.variant << " | " << r.seed << " | "
        << r.final_step << " | " << fmt(r.wg) << " | " << fmt(r.avg) << " | "
        << fmt(r.disparity) << " |\n";
  return out.str();
}

// Aggregates run directories into report.md + report.svg under out_dir.
inline std::vector<VariantSummary> write_report(
    const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  if (run_dirs.empty()) throw ConfigError("report: no run directories given");
  std::vector<RunRecord> records;
  for (const auto& dir : run_dirs) records.push_back(read_run_dir(dir));
  std::vector<VariantSummary> summary = summarize_runs(records);

  std::vector<std::string> groups, series = {"WG", "AVG", "disparity"};
  std::vector<std::vector<double>> values;
  for (const auto& s : summary) {
    groups.push_back(s.variant);
    values.push_back({s.wg_mean, s.avg_mean, s.disparity_mean});
  }

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  {
    std::ofstream svg(fs::path(out_dir) / "report.svg", std::ios::trunc);
    svg << bar_chart_svg("per-variant metrics (mean over seeds)", groups,
                         series, values);
  }
  {
    std::ofstream md(fs::path(out_dir) / "report.md", std::ios::trunc);
    md << report_markdown(records, summary, "report.svg");
  }
  return summary;
}

// Line plot of the per-layer repulsion trajectories.
inline std::string probe_svg(const ProbeLog& probe) {
  std::map<int, std::map<std::string, Series>> per_layer;
  for (const auto& r : probe.rows) {
    auto& layer = per_layer[r.layer];
    auto add = [&](const char* name, double v) {
      Series& s = layer[name];
      if (s.label.empty())
        s.label = std::string(name) + " L" + std::to_string(r.layer);
      s.x.push_back(static_cast<double>(r.step));
      s.y.push_back(v);
    };
    add("lambda", r.lambda);
    add("delta", r.delta);
    add("gamma", r.gamma);
    add("w2", r.w2);
    add("kl1", r.kl1);
  }
  std::vector<Series> series;
  for (auto& [layer, m] : per_layer)
    for (auto& [name, s] : m) series.push_back(std::move(s));
  return line_chart_svg("repulsion trajectory", "step", "value", series);
}

}  // namespace fvae
