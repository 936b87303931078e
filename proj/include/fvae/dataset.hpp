#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fvae/container.hpp"
#include "fvae/error.hpp"
#include "fvae/matrix.hpp"
#include "fvae/rng.hpp"

namespace fvae {

// Synthetic grouped benchmark with a controllable core/spurious correlation.
// Each example carries a class-aligned core block, a spurious block whose
// attribute agrees with the class with probability rho, and a pure-noise
// block. The number of spurious attribute values equals num_classes.
struct DatasetSpec {
  int num_classes = 2;
  int core_dim = 8;
  int spurious_dim = 8;
  int noise_dim = 16;
  double rho_train = 0.95;
  double rho_test = 0.5;  // uniform: 1 / num_spurious_values
  int n_train = 2000;
  int n_test = 1000;
  double core_separation = 1.0;
  double spurious_separation = 2.5;  // the shortcut is the easier signal
  double noise_sigma = 0.7;
  uint64_t seed = 7;

  int num_spurious_values() const { return num_classes; }
  int feature_dim() const { return core_dim + spurious_dim + noise_dim; }

  void validate() const {
    if (num_classes < 2)
      throw ConfigError("dataset.num_classes must be >= 2, got " +
                        std::to_string(num_classes));
    if (core_dim < 1)
      throw ConfigError("dataset.core_dim must be >= 1");
    if (spurious_dim < 0 || noise_dim < 0)
      throw ConfigError("dataset dims must be >= 0");
    if (num_classes > core_dim)
      throw ConfigError("dataset.core_dim must be >= num_classes for "
                        "orthogonal prototypes");
    if (spurious_dim > 0 && num_spurious_values() > spurious_dim)
      throw ConfigError("dataset.spurious_dim must be >= the number of "
                        "spurious values");
    const double lo = 1.0 / num_spurious_values();
    for (auto [name, rho] : {std::pair<const char*, double>{"rho_train", rho_train},
                             {"rho_test", rho_test}})
      if (!(rho >= lo - 1e-12 && rho <= 1.0))
        throw ConfigError("dataset." + std::string(name) + " must lie in [" +
                          std::to_string(lo) + ",1], got " +
                          std::to_string(rho));
    const int min_count = num_classes * num_spurious_values();
    if (n_train < min_count || n_test < min_count)
      throw ConfigError("dataset.n_train and n_test must be >= num_classes * "
                        "num_spurious_values");
    if (noise_sigma < 0.0 || core_separation < 0.0 || spurious_separation < 0.0)
      throw ConfigError("dataset separations and noise_sigma must be >= 0");
  }
};

struct GroupedDataset {
  int num_classes = 0;
  int num_spurious = 0;
  Matrix features;
  std::vector<int> labels;
  std::vector<int> spurious;

  size_t size() const { return labels.size(); }
  int num_groups() const { return num_classes * num_spurious; }
  int group_of(size_t i) const {
    return labels[i] * num_spurious + spurious[i];
  }

  std::vector<size_t> group_counts() const {
    std::vector<size_t> counts(static_cast<size_t>(num_groups()), 0);
    for (size_t i = 0; i < size(); ++i)
      ++counts[static_cast<size_t>(group_of(i))];
    return counts;
  }
};

namespace ds_detail {

inline GroupedDataset generate_split(const DatasetSpec& spec, int n, double rho,
                                     Pcg64& rng) {
  GroupedDataset ds;
  ds.num_classes = spec.num_classes;
  ds.num_spurious = spec.num_spurious_values();
  ds.features = Matrix(n, spec.feature_dim());
  ds.labels.resize(static_cast<size_t>(n));
  ds.spurious.resize(static_cast<size_t>(n));

  const int k = spec.num_classes;
  for (int i = 0; i < n; ++i) {
    const int c = static_cast<int>(rng.next_below(static_cast<uint64_t>(k)));
    int s = c;
    if (rng.next_double() >= rho) {
      // uniform among the other attribute values
      s = static_cast<int>(rng.next_below(static_cast<uint64_t>(k - 1)));
      if (s >= c) ++s;
    }
    ds.labels[static_cast<size_t>(i)] = c;
    ds.spurious[static_cast<size_t>(i)] = s;

    double* row = ds.features.data.data() +
                  static_cast<size_t>(i) * spec.feature_dim();
    // Prototypes are orthogonal one-hot directions scaled by the separations.
    for (int j = 0; j < spec.core_dim; ++j)
      row[j] = (j == c ? spec.core_separation : 0.0) +
               spec.noise_sigma * rng.next_normal();
    for (int j = 0; j < spec.spurious_dim; ++j)
      row[spec.core_dim + j] = (j == s ? spec.spurious_separation : 0.0) +
                               spec.noise_sigma * rng.next_normal();
    for (int j = 0; j < spec.noise_dim; ++j)
      row[spec.core_dim + spec.spurious_dim + j] =
          spec.noise_sigma * rng.next_normal();
  }
  return ds;
}

}  // namespace ds_detail

inline std::pair<GroupedDataset, GroupedDataset> generate_spurious(
    const DatasetSpec& spec) {
  spec.validate();
  Pcg64 train_rng(spec.seed, fnv1a64("data.train"));
  Pcg64 test_rng(spec.seed, fnv1a64("data.test"));
  GroupedDataset train =
      ds_detail::generate_split(spec, spec.n_train, spec.rho_train, train_rng);
  GroupedDataset test =
      ds_detail::generate_split(spec, spec.n_test, spec.rho_test, test_rng);
  const auto counts = test.group_counts();
  for (size_t gidx = 0; gidx < counts.size(); ++gidx)
    if (counts[gidx] == 0)
      throw ValueError("generate_spurious: test group " +
                       std::to_string(gidx) +
                       " is empty; increase n_test or lower rho_test");
  return {std::move(train), std::move(test)};
}

struct GroupMetricsResult {
  double wg = 0.0;
  double avg = 0.0;
  double disparity = 0.0;
  std::vector<double> per_group_acc;
  std::vector<size_t> per_group_n;
};

// Worst-group / average accuracy and their absolute gap.
inline GroupMetricsResult group_metrics(const std::vector<int>& predictions,
                                        const GroupedDataset& ds) {
  if (predictions.size() != ds.size())
    throw ShapeError("group_metrics: " + std::to_string(predictions.size()) +
                     " predictions for " + std::to_string(ds.size()) +
                     " examples");
  const int groups = ds.num_groups();
  std::vector<size_t> n(static_cast<size_t>(groups), 0);
  std::vector<size_t> correct(static_cast<size_t>(groups), 0);
  size_t total_correct = 0;
  for (size_t i = 0; i < ds.size(); ++i) {
    const auto gidx = static_cast<size_t>(ds.group_of(i));
    ++n[gidx];
    if (predictions[i] == ds.labels[i]) {
      ++correct[gidx];
      ++total_correct;
    }
  }
  GroupMetricsResult r;
  r.per_group_acc.resize(static_cast<size_t>(groups));
  r.per_group_n = n;
  r.wg = 1.0;
  for (int gidx = 0; gidx < groups; ++gidx) {
    const auto gi = static_cast<size_t>(gidx);
    if (n[gi] == 0)
      throw ValueError("group_metrics: group " + std::to_string(gidx) +
                       " is empty");
    r.per_group_acc[gi] =
        static_cast<double>(correct[gi]) / static_cast<double>(n[gi]);
    r.wg = std::min(r.wg, r.per_group_acc[gi]);
  }
  r.avg = static_cast<double>(total_correct) / static_cast<double>(ds.size());
  r.disparity = std::fabs(r.wg - r.avg);
  return r;
}

// -- persistence --------------------------------------------------------------

inline void write_dataset_csv(const GroupedDataset& ds,
                              const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for write");
  const int d = ds.features.cols;
  for (int j = 0; j < d; ++j) out << "feature_" << j << ",";
  out << "label,spurious\n";
  char buf[40];
  for (size_t i = 0; i < ds.size(); ++i) {
    for (int j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g",
                    ds.features.at(static_cast<int>(i), j));
      out << buf << ',';
    }
    out << ds.labels[i] << ',' << ds.spurious[i] << '\n';
  }
  if (!out) throw IoError("short write to '" + path + "'");
}

inline GroupedDataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string header;
  if (!std::getline(in, header))
    throw IoError("'" + path + "': empty file");
  int d = 0;
  {
    std::stringstream ss(header);
    std::string col;
    while (std::getline(ss, col, ',')) {
      if (col.rfind("feature_", 0) == 0)
        ++d;
      else if (col != "label" && col != "spurious")
        throw IoError("'" + path + "': unexpected column '" + col + "'");
    }
  }
  if (d == 0) throw IoError("'" + path + "': no feature columns");
  GroupedDataset ds;
  std::vector<double> feats;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    for (int j = 0; j < d; ++j) {
      if (!std::getline(ss, cell, ','))
        throw IoError("'" + path + "': short row");
      feats.push_back(std::stod(cell));
    }
    if (!std::getline(ss, cell, ',')) throw IoError("'" + path + "': no label");
    ds.labels.push_back(std::stoi(cell));
    if (!std::getline(ss, cell, ','))
      throw IoError("'" + path + "': no spurious column");
    ds.spurious.push_back(std::stoi(cell));
  }
  ds.features.rows = static_cast<int>(ds.labels.size());
  ds.features.cols = d;
  ds.features.data = std::move(feats);
  for (size_t i = 0; i < ds.size(); ++i) {
    ds.num_classes = std::max(ds.num_classes, ds.labels[i] + 1);
    ds.num_spurious = std::max(ds.num_spurious, ds.spurious[i] + 1);
  }
  return ds;
}

inline void write_dataset_binary(const GroupedDataset& ds,
                                 const std::string& path) {
  Container c;
  c.config_json = "{\"kind\":\"dataset\",\"num_classes\":" +
                  std::to_string(ds.num_classes) +
                  ",\"num_spurious\":" + std::to_string(ds.num_spurious) + "}";
  c.add_f64("features",
            {static_cast<uint64_t>(ds.features.rows),
             static_cast<uint64_t>(ds.features.cols)},
            ds.features.data);
  std::vector<int64_t> labels(ds.labels.begin(), ds.labels.end());
  std::vector<int64_t> spur(ds.spurious.begin(), ds.spurious.end());
  const uint64_t n = labels.size();
  c.add_i64("labels", {n}, std::move(labels));
  c.add_i64("spurious", {n}, std::move(spur));
  c.write(path);
}

inline GroupedDataset read_dataset_binary(const std::string& path) {
  Container c = Container::read(path);
  const auto& f = c.find("features");
  if (f.dims.size() != 2) throw IoError("dataset: features must be rank 2");
  GroupedDataset ds;
  ds.features.rows = static_cast<int>(f.dims[0]);
  ds.features.cols = static_cast<int>(f.dims[1]);
  ds.features.data = f.f64;
  for (int64_t v : c.find("labels").i64) ds.labels.push_back(static_cast<int>(v));
  for (int64_t v : c.find("spurious").i64)
    ds.spurious.push_back(static_cast<int>(v));
  if (ds.labels.size() != static_cast<size_t>(ds.features.rows) ||
      ds.spurious.size() != ds.labels.size())
    throw IoError("dataset: row counts disagree in '" + path + "'");
  for (size_t i = 0; i < ds.size(); ++i) {
    ds.num_classes = std::max(ds.num_classes, ds.labels[i] + 1);
    ds.num_spurious = std::max(ds.num_spurious, ds.spurious[i] + 1);
  }
  return ds;
}

}  // namespace fvae
