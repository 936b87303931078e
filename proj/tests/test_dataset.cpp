#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "fvae/dataset.hpp"

using namespace fvae;

namespace {

DatasetSpec small_spec() {
  DatasetSpec s;
  s.n_train = 1000;
  s.n_test = 400;
  s.seed = 42;
  return s;
}

double empirical_alignment(const GroupedDataset& ds) {
  size_t aligned = 0;
  for (size_t i = 0; i < ds.size(); ++i)
    if (ds.labels[i] == ds.spurious[i]) ++aligned;
  return static_cast<double>(aligned) / static_cast<double>(ds.size());
}

// Plug-in mutual information (nats) between label and spurious attribute.
double empirical_mi(const GroupedDataset& ds) {
  const int k = ds.num_classes, m = ds.num_spurious;
  std::vector<double> joint(static_cast<size_t>(k) * m, 0.0);
  std::vector<double> pc(static_cast<size_t>(k), 0.0), ps(static_cast<size_t>(m), 0.0);
  const double inv = 1.0 / static_cast<double>(ds.size());
  for (size_t i = 0; i < ds.size(); ++i) {
    joint[static_cast<size_t>(ds.labels[i]) * m + ds.spurious[i]] += inv;
    pc[static_cast<size_t>(ds.labels[i])] += inv;
    ps[static_cast<size_t>(ds.spurious[i])] += inv;
  }
  double mi = 0.0;
  for (int c = 0; c < k; ++c)
    for (int s = 0; s < m; ++s) {
      const double p = joint[static_cast<size_t>(c) * m + s];
      if (p > 0.0) mi += p * std::log(p / (pc[static_cast<size_t>(c)] *
                                           ps[static_cast<size_t>(s)]));
    }
  return mi;
}

}  // namespace

TEST_CASE("generation is bit-deterministic given the spec seed") {
  DatasetSpec spec = small_spec();
  auto [a_train, a_test] = generate_spurious(spec);
  auto [b_train, b_test] = generate_spurious(spec);
  CHECK(a_train.features.data == b_train.features.data);
  CHECK(a_train.labels == b_train.labels);
  CHECK(a_test.features.data == b_test.features.data);
  spec.seed = 43;
  auto [c_train, c_test] = generate_spurious(spec);
  CHECK(a_train.features.data != c_train.features.data);
}

TEST_CASE("train correlation tracks rho_train within 0.03") {
  DatasetSpec spec = small_spec();
  spec.n_train = 4000;
  for (double rho : {0.5, 0.8, 0.95}) {
    spec.rho_train = rho;
    auto [train, test] = generate_spurious(spec);
    CHECK(std::fabs(empirical_alignment(train) - rho) < 0.03);
  }
}

TEST_CASE("majority/minority group sizes follow the binomial within 3 sigma") {
  DatasetSpec spec = small_spec();
  spec.rho_train = 0.95;
  spec.n_train = 1000;
  auto [train, test] = generate_spurious(spec);
  const auto counts = train.group_counts();
  REQUIRE(counts.size() == 4);
  const double sd_major = std::sqrt(1000 * 0.475 * (1 - 0.475));
  const double sd_minor = std::sqrt(1000 * 0.025 * (1 - 0.025));
  CHECK(std::fabs(static_cast<double>(counts[0]) - 475.0) <= 3 * sd_major);
  CHECK(std::fabs(static_cast<double>(counts[3]) - 475.0) <= 3 * sd_major);
  CHECK(std::fabs(static_cast<double>(counts[1]) - 25.0) <= 3 * sd_minor);
  CHECK(std::fabs(static_cast<double>(counts[2]) - 25.0) <= 3 * sd_minor);
}

TEST_CASE("rho at the uniform floor makes label and attribute independent") {
  DatasetSpec spec = small_spec();
  spec.rho_train = 0.5;  // 1 / num_spurious_values
  spec.n_train = 10000;
  auto [train, test] = generate_spurious(spec);
  CHECK(empirical_mi(train) < 0.01);
}

TEST_CASE("noiseless prototypes are separable by a nearest-centroid rule") {
  DatasetSpec spec = small_spec();
  spec.noise_sigma = 0.0;
  spec.spurious_dim = 0;
  spec.noise_dim = 4;
  auto [train, test] = generate_spurious(spec);

  // One-step closed-form classifier: per-class feature means from the train
  // split, nearest centroid on the test split.
  const int d = train.features.cols, k = spec.num_classes;
  std::vector<double> centroid(static_cast<size_t>(k) * d, 0.0);
  std::vector<double> n(static_cast<size_t>(k), 0.0);
  for (size_t i = 0; i < train.size(); ++i) {
    n[static_cast<size_t>(train.labels[i])] += 1.0;
    for (int j = 0; j < d; ++j)
      centroid[static_cast<size_t>(train.labels[i]) * d + j] +=
          train.features.at(static_cast<int>(i), j);
  }
  for (int c = 0; c < k; ++c)
    for (int j = 0; j < d; ++j)
      centroid[static_cast<size_t>(c) * d + j] /= n[static_cast<size_t>(c)];

  size_t correct = 0;
  for (size_t i = 0; i < test.size(); ++i) {
    int best = 0;
    double best_d = 1e300;
    for (int c = 0; c < k; ++c) {
      double dist = 0.0;
      for (int j = 0; j < d; ++j) {
        const double diff = test.features.at(static_cast<int>(i), j) -
                            centroid[static_cast<size_t>(c) * d + j];
        dist += diff * diff;
      }
      if (dist < best_d) {
        best_d = dist;
        best = c;
      }
    }
    if (best == test.labels[i]) ++correct;
  }
  CHECK(correct == test.size());
}

TEST_CASE("invalid specs are rejected with the field named") {
  DatasetSpec spec = small_spec();
  spec.rho_train = 0.2;  // below the uniform floor of 0.5
  CHECK_THROWS_WITH_AS(spec.validate(),
                       doctest::Contains("rho_train"), ConfigError);
  spec = small_spec();
  spec.num_classes = 1;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = small_spec();
  spec.core_dim = 1;  // < num_classes
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec = small_spec();
  spec.n_test = 2;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("group metrics: trivial cases and the tally oracle") {
  DatasetSpec spec = small_spec();
  auto [train, test] = generate_spurious(spec);

  std::vector<int> perfect = test.labels;
  GroupMetricsResult all = group_metrics(perfect, test);
  CHECK(all.wg == 1.0);
  CHECK(all.avg == 1.0);
  CHECK(all.disparity == 0.0);

  // Random predictions vs a brute-force per-group tally.
  Pcg64 rng(17, 4);
  std::vector<int> preds(test.size());
  for (auto& p : preds) p = static_cast<int>(rng.next_below(2));
  GroupMetricsResult got = group_metrics(preds, test);

  std::map<std::pair<int, int>, std::pair<size_t, size_t>> tally;
  for (size_t i = 0; i < test.size(); ++i) {
    auto& [n, c] = tally[{test.labels[i], test.spurious[i]}];
    ++n;
    if (preds[i] == test.labels[i]) ++c;
  }
  double wg = 1.0;
  size_t total_correct = 0;
  for (const auto& [key, nc] : tally) {
    wg = std::min(wg, static_cast<double>(nc.second) / nc.first);
    total_correct += nc.second;
  }
  CHECK(got.wg == wg);
  CHECK(got.avg == static_cast<double>(total_correct) / test.size());
  CHECK(got.disparity == std::fabs(got.wg - got.avg));
  CHECK(got.wg <= got.avg);

  CHECK_THROWS_AS(group_metrics(std::vector<int>(3, 0), test), ShapeError);
}

TEST_CASE("two equal groups at accuracies 1.0 and 0.5") {
  GroupedDataset ds;
  ds.num_classes = 2;
  ds.num_spurious = 1;
  ds.features = Matrix(8, 1);
  ds.labels = {0, 0, 0, 0, 1, 1, 1, 1};
  ds.spurious = std::vector<int>(8, 0);
  std::vector<int> preds = {0, 0, 0, 0, 1, 1, 0, 0};
  GroupMetricsResult r = group_metrics(preds, ds);
  CHECK(r.wg == 0.5);
  CHECK(r.avg == 0.75);
  CHECK(r.disparity == 0.25);
}

TEST_CASE("shuffling example order leaves group metrics unchanged") {
  DatasetSpec spec = small_spec();
  auto [train, test] = generate_spurious(spec);
  Pcg64 rng(23, 1);
  std::vector<int> preds(test.size());
  for (auto& p : preds) p = static_cast<int>(rng.next_below(2));
  GroupMetricsResult before = group_metrics(preds, test);

  auto perm = shuffled_indices(test.size(), rng);
  GroupedDataset shuffled;
  shuffled.num_classes = test.num_classes;
  shuffled.num_spurious = test.num_spurious;
  shuffled.features = Matrix(test.features.rows, test.features.cols);
  shuffled.labels.resize(test.size());
  shuffled.spurious.resize(test.size());
  std::vector<int> shuffled_preds(test.size());
  for (size_t i = 0; i < perm.size(); ++i) {
    shuffled.labels[i] = test.labels[perm[i]];
    shuffled.spurious[i] = test.spurious[perm[i]];
    shuffled_preds[i] = preds[perm[i]];
    for (int j = 0; j < test.features.cols; ++j)
      shuffled.features.at(static_cast<int>(i), j) =
          test.features.at(static_cast<int>(perm[i]), j);
  }
  GroupMetricsResult after = group_metrics(shuffled_preds, shuffled);
  CHECK(after.wg == before.wg);
  CHECK(after.avg == before.avg);
}

TEST_CASE("csv and binary round trips preserve the dataset") {
  namespace fs = std::filesystem;
  DatasetSpec spec = small_spec();
  spec.n_train = 50;
  spec.n_test = 20;
  auto [train, test] = generate_spurious(spec);

  const fs::path dir = fs::temp_directory_path() / "fvae_ds_test";
  fs::create_directories(dir);
  const std::string csv = (dir / "ds.csv").string();
  const std::string bin = (dir / "ds.fvl").string();

  write_dataset_csv(train, csv);
  GroupedDataset from_csv = read_dataset_csv(csv);
  CHECK(from_csv.labels == train.labels);
  CHECK(from_csv.spurious == train.spurious);
  CHECK(from_csv.features.data == train.features.data);  // %.17g round trip

  write_dataset_binary(train, bin);
  GroupedDataset from_bin = read_dataset_binary(bin);
  CHECK(from_bin.labels == train.labels);
  CHECK(from_bin.features.data == train.features.data);

  // Corrupted magic bytes produce a format error mentioning the version.
  {
    std::ofstream f(bin, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_WITH_AS(read_dataset_binary(bin),
                       doctest::Contains("magic"), IoError);
  fs::remove_all(dir);
}
