#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "fvae/gaussian.hpp"
#include "fvae/rng.hpp"

using namespace fvae;

namespace {

DiagGaussian random_gaussian(size_t d, Pcg64& rng) {
  std::vector<double> mu(d), lv(d);
  for (auto& m : mu) m = rng.next_uniform(-3.0, 3.0);
  for (auto& v : lv) {
    const double sigma = rng.next_uniform(0.1, 3.0);
    v = std::log(sigma * sigma);
  }
  return DiagGaussian(std::move(mu), std::move(lv));
}

std::vector<double> sample(const DiagGaussian& q, Pcg64& rng) {
  std::vector<double> z(q.dim());
  for (size_t j = 0; j < q.dim(); ++j)
    z[j] = q.mu[j] + std::exp(0.5 * q.log_var[j]) * rng.next_normal();
  return z;
}

struct McEstimate {
  double mean = 0.0;
  double se = 0.0;
};

// Monte-Carlo oracle for E_{z~q}[f(z)] with a running mean/variance.
template <typename F>
McEstimate mc_expectation(const DiagGaussian& q, F f, int n, Pcg64& rng) {
  double mean = 0.0, m2 = 0.0;
  for (int i = 1; i <= n; ++i) {
    const double v = f(sample(q, rng));
    const double d = v - mean;
    mean += d / i;
    m2 += d * (v - mean);
  }
  McEstimate e;
  e.mean = mean;
  e.se = std::sqrt(m2 / (static_cast<double>(n) - 1.0) / n);
  return e;
}

}  // namespace

TEST_CASE("kl_diag closed-form basics") {
  DiagGaussian p = DiagGaussian::standard(5);
  CHECK(kl_diag(p, p) == 0.0);

  DiagGaussian q({1.5}, {0.0});
  DiagGaussian s({0.0}, {0.0});
  CHECK(kl_diag(q, s) == doctest::Approx(1.125).epsilon(1e-14));

  CHECK_THROWS_AS(kl_diag(q, p), ShapeError);
}

TEST_CASE("cross_entropy closed-form basics") {
  DiagGaussian s({0.0}, {0.0});
  CHECK(cross_entropy(s, s) ==
        doctest::Approx(-0.5 * (kLog2Pi + 1.0)).epsilon(1e-14));
  DiagGaussian q({1.5}, {0.0});
  CHECK(cross_entropy(q, s) ==
        doctest::Approx(-0.5 * kLog2Pi - 1.625).epsilon(1e-14));
  // E_q[log p] = -H(q) - KL(q||p)
  CHECK(cross_entropy(q, s) ==
        doctest::Approx(-entropy(q) - kl_diag(q, s)).epsilon(1e-12));
}

TEST_CASE("lambda_mismatch: zero when priors coincide, 18 on the 16-d case") {
  Pcg64 rng(5, 0);
  for (int i = 0; i < 50; ++i) {
    DiagGaussian q2 = random_gaussian(4, rng);
    DiagGaussian p = random_gaussian(4, rng);
    CHECK(lambda_mismatch(q2, p, p) == 0.0);
  }
  DiagGaussian q2 = DiagGaussian::isotropic(16, 1.5);
  DiagGaussian p1 = DiagGaussian::standard(16);
  CHECK(lambda_mismatch(q2, p1, q2) == doctest::Approx(18.0).epsilon(1e-13));
}

TEST_CASE("lambda via KL difference equals cross-entropy difference to 1e-10") {
  Pcg64 rng(6, 0);
  for (int i = 0; i < 500; ++i) {
    const size_t d = 1 + rng.next_below(16);
    DiagGaussian q2 = random_gaussian(d, rng);
    DiagGaussian p1 = random_gaussian(d, rng);
    DiagGaussian p2 = random_gaussian(d, rng);
    const double via_kl = lambda_mismatch(q2, p1, p2);
    const double via_ce = cross_entropy(q2, p2) - cross_entropy(q2, p1);
    CHECK(std::fabs(via_kl - via_ce) < 1e-10);
  }
}

TEST_CASE("delta_discrepancy basics") {
  DiagGaussian s({0.0}, {0.0});
  DiagGaussian q2({1.5}, {0.0});
  CHECK(delta_discrepancy(s, s, s) == 0.0);
  CHECK(delta_discrepancy(s, q2, s) == doctest::Approx(-1.125).epsilon(1e-13));
}

TEST_CASE("gamma decomposition: symmetric case and exact additivity") {
  DiagGaussian p1 = DiagGaussian::standard(1);
  DiagGaussian p2 = DiagGaussian::isotropic(1, 1.5);
  GammaReport r = gamma_decomposition(p1, p2, p1, p2);
  CHECK(r.lambda_mismatch == doctest::Approx(1.125).epsilon(1e-13));
  CHECK(r.delta_discrepancy == doctest::Approx(-1.125).epsilon(1e-13));
  CHECK(std::fabs(r.gamma) < 1e-14);

  Pcg64 rng(7, 0);
  for (int i = 0; i < 1000; ++i) {
    const size_t d = 1 + rng.next_below(16);
    DiagGaussian q1 = random_gaussian(d, rng);
    DiagGaussian q2 = random_gaussian(d, rng);
    DiagGaussian pa = random_gaussian(d, rng);
    DiagGaussian pb = random_gaussian(d, rng);
    GammaReport g = gamma_decomposition(q1, q2, pa, pb);
    CHECK(std::fabs(g.gamma - (g.lambda_mismatch + g.delta_discrepancy)) <
          1e-10);
  }

  DiagGaussian q = random_gaussian(3, rng);
  DiagGaussian p = random_gaussian(3, rng);
  GammaReport full = gamma_decomposition(q, q, p, p);
  CHECK(full.gamma == 0.0);
}

TEST_CASE("wasserstein2: identity, symmetry, 16-d value, triangle inequality") {
  Pcg64 rng(8, 0);
  DiagGaussian a = random_gaussian(6, rng);
  CHECK(wasserstein2_diag(a, a) == 0.0);

  DiagGaussian z = DiagGaussian::standard(16);
  DiagGaussian m = DiagGaussian::isotropic(16, 1.5);
  CHECK(wasserstein2_diag(z, m) == doctest::Approx(6.0).epsilon(1e-14));

  for (int i = 0; i < 1000; ++i) {
    const size_t d = 1 + rng.next_below(8);
    DiagGaussian x = random_gaussian(d, rng);
    DiagGaussian y = random_gaussian(d, rng);
    DiagGaussian w = random_gaussian(d, rng);
    CHECK(wasserstein2_diag(x, y) ==
          doctest::Approx(wasserstein2_diag(y, x)).epsilon(1e-12));
    CHECK(wasserstein2_diag(x, w) <=
          wasserstein2_diag(x, y) + wasserstein2_diag(y, w) + 1e-12);
  }
}

TEST_CASE("delta bound: worked example and 1000-pair sweep with L=1") {
  DiagGaussian s({0.0}, {0.0});
  DiagGaussian q2({1.5}, {0.0});
  DeltaBound same = delta_bound_check(s, s);
  CHECK(same.abs_delta == 0.0);
  CHECK(same.bound == 0.0);
  CHECK(same.holds);

  DeltaBound b = delta_bound_check(s, q2, 1.0);
  CHECK(b.abs_delta == doctest::Approx(1.125).epsilon(1e-13));
  CHECK(b.bound == doctest::Approx(2.625).epsilon(1e-13));
  CHECK(b.holds);

  Pcg64 rng(9, 0);
  const size_t dims[] = {1, 4, 16};
  int violations = 0;
  for (int i = 0; i < 1000; ++i) {
    const size_t d = dims[rng.next_below(3)];
    DiagGaussian q1 = random_gaussian(d, rng);
    DiagGaussian qq2 = random_gaussian(d, rng);
    if (!delta_bound_check(q1, qq2, 1.0).holds) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("kl >= 0 and zero only at equality") {
  Pcg64 rng(10, 0);
  for (int i = 0; i < 500; ++i) {
    const size_t d = 1 + rng.next_below(12);
    DiagGaussian q = random_gaussian(d, rng);
    DiagGaussian p = random_gaussian(d, rng);
    CHECK(kl_diag(q, p) >= 0.0);
    CHECK(kl_diag(q, q) < 1e-12);
  }
}

// Monte-Carlo oracles: closed forms vs 1e5-sample estimates within 3 SE.
TEST_CASE("closed forms agree with Monte-Carlo estimates" *
          doctest::timeout(120)) {
  const int n = 100000;
  Pcg64 cfg_rng(20250811, 0);
  Pcg64 mc_rng(20250812, 1);
  const size_t dims[] = {1, 4, 8, 16};
  for (int rep = 0; rep < 12; ++rep) {
    const size_t d = dims[rep % 4];
    DiagGaussian q = random_gaussian(d, cfg_rng);
    DiagGaussian q2 = random_gaussian(d, cfg_rng);
    DiagGaussian p = random_gaussian(d, cfg_rng);
    DiagGaussian p2 = random_gaussian(d, cfg_rng);

    McEstimate kl = mc_expectation(
        q, [&](const std::vector<double>& z) {
          return q.log_prob(z) - p.log_prob(z);
        },
        n, mc_rng);
    CHECK(std::fabs(kl.mean - kl_diag(q, p)) < 3.0 * kl.se);

    McEstimate ce = mc_expectation(
        q, [&](const std::vector<double>& z) { return p.log_prob(z); }, n,
        mc_rng);
    CHECK(std::fabs(ce.mean - cross_entropy(q, p)) < 3.0 * ce.se);

    McEstimate lam = mc_expectation(
        q2, [&](const std::vector<double>& z) {
          return p2.log_prob(z) - p.log_prob(z);
        },
        n, mc_rng);
    CHECK(std::fabs(lam.mean - lambda_mismatch(q2, p, p2)) < 3.0 * lam.se);

    McEstimate e2 = mc_expectation(
        q2, [&](const std::vector<double>& z) { return p.log_prob(z); }, n,
        mc_rng);
    McEstimate e1 = mc_expectation(
        q, [&](const std::vector<double>& z) { return p.log_prob(z); }, n,
        mc_rng);
    const double delta_se = std::sqrt(e1.se * e1.se + e2.se * e2.se);
    CHECK(std::fabs((e2.mean - e1.mean) - delta_discrepancy(q, q2, p)) <
          3.0 * delta_se);
  }
}

TEST_CASE("dimension mismatches raise errors everywhere") {
  DiagGaussian a = DiagGaussian::standard(2);
  DiagGaussian b = DiagGaussian::standard(3);
  CHECK_THROWS_AS(cross_entropy(a, b), ShapeError);
  CHECK_THROWS_AS(lambda_mismatch(a, a, b), ShapeError);
  CHECK_THROWS_AS(delta_discrepancy(a, b, a), ShapeError);
  CHECK_THROWS_AS(wasserstein2_diag(a, b), ShapeError);
  CHECK_THROWS_AS(delta_bound_check(a, b), ShapeError);
  CHECK_THROWS_AS(gamma_decomposition(a, a, a, b), ShapeError);
  CHECK_THROWS_AS(DiagGaussian({1.0}, {1.0, 2.0}), ShapeError);
}
