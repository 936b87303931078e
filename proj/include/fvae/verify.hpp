#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "fvae/adapters.hpp"
#include "fvae/gaussian.hpp"
#include "fvae/gradcheck.hpp"
#include "fvae/matrix.hpp"
#include "fvae/objectives.hpp"
#include "fvae/rng.hpp"

namespace fvae {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

inline bool all_pass(const std::vector<CheckResult>& checks) {
  for (const auto& c : checks)
    if (!c.pass) return false;
  return true;
}

// Debug hooks for exercising the failure path of cmd_verify.
enum class FaultInjection { None, DeltaSign };

namespace verify_detail {

inline DiagGaussian random_gaussian(size_t d, Pcg64& rng) {
  std::vector<double> mu(d), lv(d);
  for (auto& m : mu) m = rng.next_uniform(-3.0, 3.0);
  for (auto& v : lv) {
    const double sigma = rng.next_uniform(0.1, 3.0);
    v = std::log(sigma * sigma);
  }
  return DiagGaussian(std::move(mu), std::move(lv));
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct McStat {
  double mean = 0.0;
  double se = 0.0;
};

template <typename F>
McStat mc_expectation(const DiagGaussian& q, F f, int n, Pcg64& rng) {
  double mean = 0.0, m2 = 0.0;
  std::vector<double> z(q.dim());
  for (int i = 1; i <= n; ++i) {
    for (size_t j = 0; j < q.dim(); ++j)
      z[j] = q.mu[j] + std::exp(0.5 * q.log_var[j]) * rng.next_normal();
    const double v = f(z);
    const double d = v - mean;
    mean += d / i;
    m2 += d * (v - mean);
  }
  return {mean, std::sqrt(m2 / (static_cast<double>(n) - 1.0) / n)};
}

}  // namespace verify_detail

// -- gradcheck suite ----------------------------------------------------------

// Finite-difference check of every trainable parameter of the full adapter
// objective: softmax cross-entropy head on top of an FVAE-adapted 8-dim layer
// (batch 4) plus the lambda-weighted ELBO.
inline CheckResult check_full_objective_gradients(double tol = 1e-4) {
  Pcg64 rng(424242, 9);
  AdapterConfig cfg;
  cfg.rank_r = 2;
  cfg.z2_dim = 2;
  cfg.decoder_hidden = 4;
  cfg.dropout_p = 0.0;
  ParamStore store;
  FvaeAdapter adapter = FvaeAdapter::create(store, "f", 8, 8, cfg, rng);
  for (auto& p : store.all())
    if (p.trainable)
      for (auto& v : p.value) v = rng.next_uniform(-0.7, 0.7);

  Matrix x(4, 8);
  for (auto& v : x.data) v = rng.next_uniform(-1.0, 1.0);
  std::vector<double> eps1 = normal_vector(8, rng);
  std::vector<double> eps2 = normal_vector(8, rng);
  std::vector<double> head = normal_vector(16, rng);
  const std::vector<int> labels = {0, 1, 0, 1};
  LatentPriors priors = make_priors(cfg.rank_r, cfg.z2_dim, cfg.prior2_center);
  ObjectiveCoeffs coeffs;
  coeffs.lambda_per_layer = {1e-2};

  auto loss_tensor = [&](Graph& g) {
    auto [y, inter] = adapter.forward_train_with(
        g, store, g.constant({4, 8}, x.data), eps1, eps2);
    Tensor logits = g.matmul(y, g.transpose(g.constant({2, 8}, head)));
    Tensor down = softmax_cross_entropy(g, {logits}, labels, 2);
    auto [elbo, b] = fvae_elbo(g, {inter}, coeffs, priors);
    return total_loss(g, down, {elbo}, coeffs).first;
  };

  Graph g;
  Tensor loss = loss_tensor(g);
  g.backward(loss);

  CheckResult r;
  r.name = "gradcheck/full-fvae-total-loss";
  double worst = 0.0;
  std::string worst_param = "-";
  const double h = 1e-5;
  for (const auto& p : store.all()) {
    if (!p.trainable) continue;
    const auto* analytic = g.grad_by_name(p.name);
    if (analytic == nullptr) {
      r.detail = "no gradient recorded for " + p.name;
      return r;
    }
    auto& value = store.at(p.name).value;
    for (size_t j = 0; j < value.size(); ++j) {
      const double orig = value[j];
      value[j] = orig + h;
      Graph gp;
      const double fp = loss_tensor(gp).item();
      value[j] = orig - h;
      Graph gm;
      const double fm = loss_tensor(gm).item();
      value[j] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      if (!std::isfinite(numeric) || !std::isfinite((*analytic)[j])) {
        r.detail = "non-finite gradient at " + p.name;
        return r;
      }
      const double denom =
          std::max({1.0, std::fabs(numeric), std::fabs((*analytic)[j])});
      const double rel = std::fabs((*analytic)[j] - numeric) / denom;
      if (rel > worst) {
        worst = rel;
        worst_param = p.name;
      }
    }
  }
  r.pass = worst < tol;
  r.detail = "max rel err " + verify_detail::fmt(worst) + " at " + worst_param;
  return r;
}

inline std::vector<CheckResult> run_gradcheck_suite() {
  std::vector<CheckResult> out;
  Pcg64 rng(20240808, 3);
  auto uniform = [&rng](size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.next_uniform(-2.0, 2.0);
    return v;
  };
  auto positive = [&rng](size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.next_uniform(0.25, 2.0);
    return v;
  };

  struct OpCase {
    std::string name;
    std::vector<GradCheckLeaf> leaves;
    GraphBuilder build;
    double tol;
  };
  const std::vector<double> mask = {1, 0, 1, 1, 0, 1};
  const std::vector<double> eps = uniform(6);
  std::vector<OpCase> cases;
  cases.push_back({"matmul",
                   {{"a", {3, 4}, uniform(12)}, {"b", {4, 2}, uniform(8)}},
                   [](Graph& g, const std::vector<Tensor>& t) {
                     return g.reduce_sum(g.square(g.matmul(t[0], t[1])));
                   },
                   1e-4});
  cases.push_back({"transpose",
                   {{"a", {2, 3}, uniform(6)}},
                   [](Graph& g, const std::vector<Tensor>& t) {
                     return g.reduce_sum(g.square(g.transpose(t[0])));
                   },
                   1e-4});
  cases.push_back({"add-sub-mul",
                   {{"a", {2, 3}, uniform(6)}, {"b", {2, 3}, uniform(6)}},
                   [](Graph& g, const std::vector<Tensor>& t) {
                     return g.reduce_sum(
                         g.mul(g.add(t[0], t[1]), g.sub(t[0], t[1])));
                   },
                   1e-4});
  cases.push_back({"scale-bias_add",
                   {{"x", {2, 3}, uniform(6)}, {"b", {3}, uniform(3)}},
                   [](Graph& g, const std::vector<Tensor>& t) {
                     return g.reduce_mean(
                         g.scale(g.bias_add(t[0], t[1]), -1.7));
                   },
                   1e-4});
  cases.push_back({"exp",
                   {{"x", {2, 3}, uniform(6)}},
                   [](Graph& g, const std::vector<Tensor>& t) {
                     return g.reduce_sum(g.exp(t[0]));
                   },
                   1e-4});
  cases.push_back({"log",
                   {{"x", {6}, positive(6)}},
                   [](Graph& g, const std::vector<Tensor>& t) {
                     return g.reduce_sum(g.log(t[0]));
                   },
                   1e-4});
  cases.push_back({"relu",
                   {{"x", {2, 3}, uniform(6)}},
                   [](Graph& g, const std::vector<Tensor>& t) {
                     return g.reduce_sum(g.relu(t[0]));
                   },
                   1e-4});
  cases.push_back({"log_softmax",
                   {{"x", {2, 3}, uniform(6)}},
                   [](Graph& g, const std::vector<Tensor>& t) {
                     Tensor w = g.constant({2, 3}, {0.3, -1, 2, 1, 0.5, -2});
                     return g.reduce_sum(g.mul(g.log_softmax(t[0]), w));
                   },
                   1e-4});
  cases.push_back({"square-reduce_mean",
                   {{"x", {2, 3}, uniform(6)}},
                   [](Graph& g, const std::vector<Tensor>& t) {
                     return g.reduce_mean(g.square(t[0]));
                   },
                   1e-4});
  cases.push_back({"concat-slice",
                   {{"a", {2, 2}, uniform(4)}, {"b", {2, 3}, uniform(6)}},
                   [](Graph& g, const std::vector<Tensor>& t) {
                     Tensor c = g.concat_cols(t[0], t[1]);
                     return g.reduce_sum(g.square(g.slice_cols(c, 1, 4)));
                   },
                   1e-4});
  cases.push_back({"dropout",
                   {{"x", {2, 3}, uniform(6)}},
                   [mask](Graph& g, const std::vector<Tensor>& t) {
                     Tensor m = g.constant({2, 3}, mask);
                     return g.reduce_sum(g.square(g.dropout(t[0], m, 0.25)));
                   },
                   1e-4});
  cases.push_back({"reparameterize",
                   {{"mu", {2, 3}, uniform(6)}, {"lv", {2, 3}, uniform(6)}},
                   [eps](Graph& g, const std::vector<Tensor>& t) {
                     Tensor e = g.constant({2, 3}, eps);
                     return g.reduce_sum(
                         g.square(g.reparameterize(t[0], t[1], e)));
                   },
                   1e-4});
  cases.push_back({"quadratic-form",
                   {{"x", {1, 3}, uniform(3)}},
                   [](Graph& g, const std::vector<Tensor>& t) {
                     Tensor M = g.constant({3, 3}, {2, 1, 0, 1, 3, 0.5, 0, 0.5, 1});
                     return g.reduce_sum(g.mul(
                         t[0], g.transpose(g.matmul(M, g.transpose(t[0])))));
                   },
                   1e-6});

  for (auto& c : cases) {
    GradCheckReport rep = gradcheck(c.leaves, c.build, c.tol);
    double worst = 0.0;
    for (const auto& e : rep.entries) worst = std::max(worst, e.max_rel_err);
    out.push_back({"gradcheck/" + c.name, rep.ok,
                   "max rel err " + verify_detail::fmt(worst)});
  }
  out.push_back(check_full_objective_gradients());
  return out;
}

// -- analytics suite (Monte-Carlo oracles) ------------------------------------

inline std::vector<CheckResult> run_analytics_suite(int configs = 100,
                                                    int samples = 100000) {
  using verify_detail::mc_expectation;
  using verify_detail::random_gaussian;
  Pcg64 cfg_rng(31415, 1);
  Pcg64 mc_rng(92653, 2);
  const size_t dims[] = {1, 4, 16};

  struct Agg {
    double worst = 0.0;  // max |error| / SE
    bool pass = true;
  };
  Agg kl, ce, lam, del, gam;
  auto fold = [](Agg& a, double err, double se) {
    const double z = std::fabs(err) / se;
    a.worst = std::max(a.worst, z);
    if (z >= 3.0) a.pass = false;
  };

  for (int i = 0; i < configs; ++i) {
    const size_t d = dims[i % 3];
    DiagGaussian q1 = random_gaussian(d, cfg_rng);
    DiagGaussian q2 = random_gaussian(d, cfg_rng);
    DiagGaussian p1 = random_gaussian(d, cfg_rng);
    DiagGaussian p2 = random_gaussian(d, cfg_rng);

    auto e_kl = mc_expectation(
        q1, [&](const std::vector<double>& z) {
          return q1.log_prob(z) - p1.log_prob(z);
        },
        samples, mc_rng);
    fold(kl, e_kl.mean - kl_diag(q1, p1), e_kl.se);

    auto e_ce = mc_expectation(
        q1, [&](const std::vector<double>& z) { return p1.log_prob(z); },
        samples, mc_rng);
    fold(ce, e_ce.mean - cross_entropy(q1, p1), e_ce.se);

    auto e_lam = mc_expectation(
        q2, [&](const std::vector<double>& z) {
          return p2.log_prob(z) - p1.log_prob(z);
        },
        samples, mc_rng);
    fold(lam, e_lam.mean - lambda_mismatch(q2, p1, p2), e_lam.se);

    auto e2 = mc_expectation(
        q2, [&](const std::vector<double>& z) { return p1.log_prob(z); },
        samples, mc_rng);
    auto e1 = mc_expectation(
        q1, [&](const std::vector<double>& z) { return p1.log_prob(z); },
        samples, mc_rng);
    const double se_d = std::sqrt(e1.se * e1.se + e2.se * e2.se);
    fold(del, (e2.mean - e1.mean) - delta_discrepancy(q1, q2, p1), se_d);

    auto g2 = mc_expectation(
        q2, [&](const std::vector<double>& z) { return p2.log_prob(z); },
        samples, mc_rng);
    auto g1 = mc_expectation(
        q1, [&](const std::vector<double>& z) { return p1.log_prob(z); },
        samples, mc_rng);
    const double se_g = std::sqrt(g1.se * g1.se + g2.se * g2.se);
    const double gamma_cf = cross_entropy(q2, p2) - cross_entropy(q1, p1);
    fold(gam, (g2.mean - g1.mean) - gamma_cf, se_g);
  }

  auto result = [&](const char* name, const Agg& a) {
    return CheckResult{std::string("analytics/") + name + "-vs-monte-carlo",
                       a.pass,
                       "max |err|/SE = " + verify_detail::fmt(a.worst) + " over " +
                           std::to_string(configs) + " configs"};
  };
  return {result("kl", kl), result("cross-entropy", ce), result("lambda", lam),
          result("delta", del), result("gamma", gam)};
}

// -- exact identities suite ----------------------------------------------------

inline std::vector<CheckResult> run_identities_suite(
    FaultInjection fault = FaultInjection::None) {
  using verify_detail::random_gaussian;
  std::vector<CheckResult> out;
  Pcg64 rng(31337, 5);
  const size_t dims[] = {1, 4, 16};

  {  // lambda via KL difference == lambda via cross-entropy difference
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const size_t d = dims[i % 3];
      DiagGaussian q2 = random_gaussian(d, rng);
      DiagGaussian p1 = random_gaussian(d, rng);
      DiagGaussian p2 = random_gaussian(d, rng);
      const double a = lambda_mismatch(q2, p1, p2);
      const double b = cross_entropy(q2, p2) - cross_entropy(q2, p1);
      worst = std::max(worst, std::fabs(a - b));
    }
    out.push_back({"identities/lambda-dual-route", worst < 1e-10,
                   "max |kl-route - ce-route| = " + verify_detail::fmt(worst)});
  }

  {  // lambda == 0 whenever p1 == p2
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const size_t d = dims[i % 3];
      DiagGaussian q2 = random_gaussian(d, rng);
      DiagGaussian p = random_gaussian(d, rng);
      worst = std::max(worst, std::fabs(lambda_mismatch(q2, p, p)));
    }
    out.push_back({"identities/lambda-null-mismatch", worst == 0.0,
                   "max |lambda| = " + verify_detail::fmt(worst)});
  }

  {  // gamma == lambda + delta
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const size_t d = dims[i % 3];
      DiagGaussian q1 = random_gaussian(d, rng);
      DiagGaussian q2 = random_gaussian(d, rng);
      DiagGaussian p1 = random_gaussian(d, rng);
      DiagGaussian p2 = random_gaussian(d, rng);
      const double lambda = lambda_mismatch(q2, p1, p2);
      double delta = delta_discrepancy(q1, q2, p1);
      if (fault == FaultInjection::DeltaSign) delta = -delta;
      const double gamma = cross_entropy(q2, p2) - cross_entropy(q1, p1);
      worst = std::max(worst, std::fabs(gamma - (lambda + delta)));
    }
    out.push_back({"identities/gamma-additivity", worst < 1e-10,
                   "max |gamma - (lambda+delta)| = " + verify_detail::fmt(worst)});
  }

  {  // Wasserstein bound sweep with L = 1, p1 = N(0, I)
    int violations = 0;
    double tightest = 1e300;
    for (int i = 0; i < 1000; ++i) {
      const size_t d = dims[i % 3];
      DiagGaussian q1 = random_gaussian(d, rng);
      DiagGaussian q2 = random_gaussian(d, rng);
      DeltaBound b = delta_bound_check(q1, q2, 1.0);
      if (!b.holds) ++violations;
      if (b.bound > 0.0) tightest = std::min(tightest, b.bound - b.abs_delta);
    }
    out.push_back({"identities/delta-wasserstein-bound", violations == 0,
                   std::to_string(violations) + " violations in 1000 pairs"});
  }

  {  // triangle inequality for W2
    int violations = 0;
    for (int i = 0; i < 1000; ++i) {
      const size_t d = dims[i % 3];
      DiagGaussian a = random_gaussian(d, rng);
      DiagGaussian b = random_gaussian(d, rng);
      DiagGaussian c = random_gaussian(d, rng);
      if (wasserstein2_diag(a, c) >
          wasserstein2_diag(a, b) + wasserstein2_diag(b, c) + 1e-12)
        ++violations;
    }
    out.push_back({"identities/w2-triangle-inequality", violations == 0,
                   std::to_string(violations) + " violations in 1000 triples"});
  }

  {  // pre-rearrangement objective == structured objective at (1,1,1)
    AdapterConfig cfg;
    cfg.rank_r = 3;
    cfg.z2_dim = 2;
    cfg.decoder_hidden = 5;
    cfg.dropout_p = 0.0;
    ObjectiveCoeffs unit;
    double worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
      ParamStore store;
      Pcg64 init(1000 + static_cast<uint64_t>(rep), 0);
      FvaeAdapter a = FvaeAdapter::create(store, "f", 4, 4, cfg, init);
      for (auto& p : store.all())
        if (p.trainable)
          for (auto& v : p.value) v = rng.next_uniform(-0.7, 0.7);
      Graph g;
      std::vector<double> x(8);
      for (auto& v : x) v = rng.next_uniform(-1.0, 1.0);
      auto [y, inter] = a.forward_train_with(g, store, g.constant({2, 4}, x),
                                             normal_vector(6, rng),
                                             normal_vector(4, rng));
      const double center = rep % 10 == 0 ? 0.0 : 1.5;  // degenerate corner too
      LatentPriors priors = make_priors(cfg.rank_r, cfg.z2_dim, center);
      const double via_cross = cross_term_objective(g, {inter}, priors).item();
      const double via_fvae = fvae_elbo(g, {inter}, unit, priors).first.item();
      worst = std::max(worst, std::fabs(via_cross - via_fvae));
    }
    out.push_back({"identities/objective-rearrangement", worst < 1e-10,
                   "max |difference| = " + verify_detail::fmt(worst) +
                       " over 100 states"});
  }

  return out;
}

inline std::vector<CheckResult> run_verify_suites(
    const std::string& which, FaultInjection fault = FaultInjection::None) {
  std::vector<CheckResult> out;
  if (which != "all" && which != "gradcheck" && which != "analytics" &&
      which != "identities")
    throw ConfigError("verify: unknown suite '" + which +
                      "' (expected all|gradcheck|analytics|identities)");
  if (which == "all" || which == "gradcheck") {
    auto r = run_gradcheck_suite();
    out.insert(out.end(), r.begin(), r.end());
  }
  if (which == "all" || which == "analytics") {
    auto r = run_analytics_suite();
    out.insert(out.end(), r.begin(), r.end());
  }
  if (which == "all" || which == "identities") {
    auto r = run_identities_suite(fault);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

}  // namespace fvae
