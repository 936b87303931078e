#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fvae/error.hpp"

namespace fvae {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Diagonal Gaussian over d latent dimensions, parameterized by per-dimension
// mean and log-variance.
struct DiagGaussian {
  std::vector<double> mu;
  std::vector<double> log_var;

  DiagGaussian() = default;
  DiagGaussian(std::vector<double> m, std::vector<double> lv)
      : mu(std::move(m)), log_var(std::move(lv)) {
    if (mu.empty() || mu.size() != log_var.size())
      throw ShapeError("DiagGaussian: mu has length " +
                       std::to_string(mu.size()) + ", log_var " +
                       std::to_string(log_var.size()));
  }

  size_t dim() const { return mu.size(); }

  // N(center * 1, I) over d dimensions.
  static DiagGaussian isotropic(size_t d, double center) {
    return DiagGaussian(std::vector<double>(d, center),
                        std::vector<double>(d, 0.0));
  }

  static DiagGaussian standard(size_t d) { return isotropic(d, 0.0); }

  double log_prob(const std::vector<double>& z) const {
    if (z.size() != dim())
      throw ShapeError("log_prob: point dimension " + std::to_string(z.size()) +
                       " vs distribution dimension " + std::to_string(dim()));
    double s = 0.0;
    for (size_t j = 0; j < dim(); ++j) {
      const double d = z[j] - mu[j];
      s += kLog2Pi + log_var[j] + d * d / std::exp(log_var[j]);
    }
    return -0.5 * s;
  }
};

namespace detail {
inline void check_same_dim(const DiagGaussian& a, const DiagGaussian& b,
                           const char* op) {
  if (a.dim() != b.dim())
    throw ShapeError(std::string(op) + ": dimension mismatch " +
                     std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
}
}  // namespace detail

// KL(q || p) in closed form; >= 0, zero iff q == p.
inline double kl_diag(const DiagGaussian& q, const DiagGaussian& p) {
  detail::check_same_dim(q, p, "kl_diag");
  double s = 0.0;
  for (size_t j = 0; j < q.dim(); ++j) {
    const double var_q = std::exp(q.log_var[j]);
    const double var_p = std::exp(p.log_var[j]);
    const double dm = q.mu[j] - p.mu[j];
    s += var_q / var_p + dm * dm / var_p - 1.0 + p.log_var[j] - q.log_var[j];
  }
  return 0.5 * s;
}

// E_{z~q}[log p(z)] in closed form. Note the sign convention: this is the
// negative of the conventional cross-entropy H(q,p).
inline double cross_entropy(const DiagGaussian& q, const DiagGaussian& p) {
  detail::check_same_dim(q, p, "cross_entropy");
  double s = 0.0;
  for (size_t j = 0; j < q.dim(); ++j) {
    const double var_q = std::exp(q.log_var[j]);
    const double var_p = std::exp(p.log_var[j]);
    const double dm = q.mu[j] - p.mu[j];
    s += kLog2Pi + p.log_var[j] + (var_q + dm * dm) / var_p;
  }
  return -0.5 * s;
}

// Differential entropy of a diagonal Gaussian.
inline double entropy(const DiagGaussian& q) {
  double s = 0.0;
  for (size_t j = 0; j < q.dim(); ++j) s += kLog2Pi + 1.0 + q.log_var[j];
  return 0.5 * s;
}

// Mismatch: KL(q2 || p1) - KL(q2 || p2). Vanishes when p1 == p2.
inline double lambda_mismatch(const DiagGaussian& q2, const DiagGaussian& p1,
                              const DiagGaussian& p2) {
  detail::check_same_dim(q2, p1, "lambda_mismatch");
  detail::check_same_dim(q2, p2, "lambda_mismatch");
  return kl_diag(q2, p1) - kl_diag(q2, p2);
}

// Discrepancy: E_{q2}[log p1] - E_{q1}[log p1]. Vanishes when q1 == q2.
inline double delta_discrepancy(const DiagGaussian& q1, const DiagGaussian& q2,
                                const DiagGaussian& p1) {
  detail::check_same_dim(q1, q2, "delta_discrepancy");
  detail::check_same_dim(q1, p1, "delta_discrepancy");
  return cross_entropy(q2, p1) - cross_entropy(q1, p1);
}

// 2-Wasserstein distance between diagonal Gaussians:
// W2^2 = sum_j (mu1_j - mu2_j)^2 + (sigma1_j - sigma2_j)^2.
inline double wasserstein2_diag(const DiagGaussian& q1,
                                const DiagGaussian& q2) {
  detail::check_same_dim(q1, q2, "wasserstein2_diag");
  double s = 0.0;
  for (size_t j = 0; j < q1.dim(); ++j) {
    const double dm = q1.mu[j] - q2.mu[j];
    const double ds =
        std::exp(0.5 * q1.log_var[j]) - std::exp(0.5 * q2.log_var[j]);
    s += dm * dm + ds * ds;
  }
  return std::sqrt(s);
}

struct DeltaBound {
  double abs_delta = 0.0;
  double bound = 0.0;
  bool holds = false;
};

// Wasserstein bound on |Delta| with p1 = N(0,I):
//   |Delta| <= (L/2) W2^2 + sqrt(sum_j mu1_j^2 + sigma1_j^2) * W2.
// L = 1 covers the standard-normal prior, whose log-density Hessian is -I.
inline DeltaBound delta_bound_check(const DiagGaussian& q1,
                                    const DiagGaussian& q2, double L = 1.0) {
  detail::check_same_dim(q1, q2, "delta_bound_check");
  if (L < 0.0)
    throw ValueError("delta_bound_check: L must be >= 0, got " +
                     std::to_string(L));
  const DiagGaussian p1 = DiagGaussian::standard(q1.dim());
  const double w2 = wasserstein2_diag(q1, q2);
  double second_moment = 0.0;
  for (size_t j = 0; j < q1.dim(); ++j)
    second_moment += q1.mu[j] * q1.mu[j] + std::exp(q1.log_var[j]);
  DeltaBound out;
  out.abs_delta = std::fabs(delta_discrepancy(q1, q2, p1));
  out.bound = 0.5 * L * w2 * w2 + std::sqrt(second_moment) * w2;
  out.holds = out.abs_delta <= out.bound;
  return out;
}

// Decomposition report for the repulsive regularizer:
// gamma = E_{q2}[log p2] - E_{q1}[log p1] = lambda + delta.
struct GammaReport {
  double lambda_mismatch = 0.0;
  double delta_discrepancy = 0.0;
  double gamma = 0.0;
  double w2 = 0.0;
  double bound = 0.0;
  bool bound_holds = false;
};

inline GammaReport gamma_decomposition(const DiagGaussian& q1,
                                       const DiagGaussian& q2,
                                       const DiagGaussian& p1,
                                       const DiagGaussian& p2) {
  detail::check_same_dim(q1, q2, "gamma");
  detail::check_same_dim(q1, p1, "gamma");
  detail::check_same_dim(q1, p2, "gamma");
  GammaReport r;
  r.lambda_mismatch = lambda_mismatch(q2, p1, p2);
  r.delta_discrepancy = delta_discrepancy(q1, q2, p1);
  r.gamma = cross_entropy(q2, p2) - cross_entropy(q1, p1);
  r.w2 = wasserstein2_diag(q1, q2);
  const DeltaBound b = delta_bound_check(q1, q2, 1.0);
  r.bound = b.bound;
  r.bound_holds = b.holds;
  return r;
}

}  // namespace fvae
