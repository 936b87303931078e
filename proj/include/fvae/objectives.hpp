#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "fvae/adapters.hpp"
#include "fvae/gaussian.hpp"
#include "fvae/tensor.hpp"

namespace fvae {

struct ObjectiveCoeffs {
  double alpha = 1.0;
  double beta = 1.0;
  double delta = 1.0;
  std::vector<double> lambda_per_layer;  // resolved to one weight per layer

  void validate(int num_adapted_layers) const {
    for (double v : {alpha, beta, delta})
      if (!std::isfinite(v))
        throw ConfigError("objective coefficients must be finite");
    for (double v : lambda_per_layer)
      if (!std::isfinite(v)) throw ConfigError("objective.lambda must be finite");
    if (static_cast<int>(lambda_per_layer.size()) != num_adapted_layers)
      throw ConfigError("objective.lambda has " +
                        std::to_string(lambda_per_layer.size()) +
                        " entries for " + std::to_string(num_adapted_layers) +
                        " adapted layers");
  }
};

// Itemized objective record. Scalar fields are batch means.
struct LossBreakdown {
  double recon = 0.0;
  double kl1 = 0.0;
  double kl2 = 0.0;
  double lambda_mismatch = 0.0;
  double delta_discrepancy = 0.0;
  double gamma = 0.0;
  double elbo = 0.0;
  double downstream = 0.0;
  double total = 0.0;
};

struct LatentPriors {
  DiagGaussian p1;  // over z1 (rank_r dims)
  DiagGaussian p2;  // over z2 (z2_dim dims)
};

inline LatentPriors make_priors(int rank_r, int z2_dim, double prior2_center) {
  return {DiagGaussian::standard(static_cast<size_t>(rank_r)),
          DiagGaussian::isotropic(static_cast<size_t>(z2_dim), prior2_center)};
}

// Batch-mean repulsion quantities, computed row-wise with the closed-form
// analytics (each row of (mu, log_var) is one diagonal-Gaussian posterior).
// lambda, delta and w2 compare the two posteriors pointwise, which requires
// dim(z1) == dim(z2); they are reported as 0 with decomposable=false
// otherwise. gamma and the KL terms are defined for any dimensions.
struct ProbeStats {
  double lambda = 0.0;
  double delta = 0.0;
  double gamma = 0.0;
  double w2 = 0.0;
  double kl1 = 0.0;
  double kl2 = 0.0;
  bool decomposable = true;
};

namespace obj_detail {

inline DiagGaussian row_gaussian(const std::vector<double>& mu,
                                 const std::vector<double>& lv, int row,
                                 int d) {
  const size_t off = static_cast<size_t>(row) * d;
  return DiagGaussian(
      std::vector<double>(mu.begin() + off, mu.begin() + off + d),
      std::vector<double>(lv.begin() + off, lv.begin() + off + d));
}

inline Tensor tile_rows(Graph& g, const std::vector<double>& row, int rows) {
  std::vector<double> data;
  data.reserve(row.size() * static_cast<size_t>(rows));
  for (int i = 0; i < rows; ++i) data.insert(data.end(), row.begin(), row.end());
  return g.constant({rows, static_cast<int>(row.size())}, std::move(data));
}

// Sum over rows of KL(q_row || p), as a differentiable graph expression.
inline Tensor kl_sum(Graph& g, Tensor mu, Tensor log_var,
                     const DiagGaussian& p) {
  const Shape& s = g.shape_of(mu);
  const int rows = s[0], d = s[1];
  std::vector<double> inv_var(p.dim()), log_var_p_sum(1, 0.0);
  double const_part = 0.0;
  for (size_t j = 0; j < p.dim(); ++j) {
    inv_var[j] = std::exp(-p.log_var[j]);
    const_part += p.log_var[j];
  }
  Tensor inv = tile_rows(g, inv_var, rows);
  Tensor mup = tile_rows(g, p.mu, rows);
  Tensor t1 = g.reduce_sum(g.mul(g.exp(log_var), inv));
  Tensor t2 = g.reduce_sum(g.mul(g.square(g.sub(mu, mup)), inv));
  Tensor t3 = g.reduce_sum(log_var);
  const double c = rows * (const_part - static_cast<double>(d));
  Tensor s01 = g.add(t1, t2);
  Tensor s02 = g.add(g.scale(t3, -1.0), g.scalar(c));
  return g.scale(g.add(s01, s02), 0.5);
}

// Sum over rows of E_{q_row}[log p], differentiable in (mu, log_var).
inline Tensor expected_log_prob_sum(Graph& g, Tensor mu, Tensor log_var,
                                    const DiagGaussian& p) {
  const Shape& s = g.shape_of(mu);
  const int rows = s[0];
  std::vector<double> inv_var(p.dim());
  double const_part = 0.0;
  for (size_t j = 0; j < p.dim(); ++j) {
    inv_var[j] = std::exp(-p.log_var[j]);
    const_part += kLog2Pi + p.log_var[j];
  }
  Tensor inv = tile_rows(g, inv_var, rows);
  Tensor mup = tile_rows(g, p.mu, rows);
  Tensor t = g.reduce_sum(
      g.mul(g.add(g.exp(log_var), g.square(g.sub(mu, mup))), inv));
  return g.scale(g.add(t, g.scalar(rows * const_part)), -0.5);
}

// Sum over rows of E_{q_row}[log q_row] (negative entropy).
inline Tensor neg_entropy_sum(Graph& g, Tensor log_var) {
  const Shape& s = g.shape_of(log_var);
  const double c = static_cast<double>(s[0]) * s[1] * (kLog2Pi + 1.0);
  return g.scale(g.add(g.reduce_sum(log_var), g.scalar(c)), -0.5);
}

struct TermSums {
  Tensor recon_sum;   // sum over rows of -1/2 ||x - x_hat||^2
  Tensor kl1_sum;     // sum of KL(q1 || p1)
  Tensor kl2_sum;     // sum of KL(q2 || p2)
  Tensor ce1p1_sum;   // sum of E_{q1}[log p1]
  Tensor ce2p2_sum;   // sum of E_{q2}[log p2]
  Tensor negent2_sum; // sum of E_{q2}[log q2]
  int rows = 0;
};

inline TermSums term_sums(Graph& g,
                          const std::vector<FvaeIntermediates>& chunks,
                          const LatentPriors& priors) {
  if (chunks.empty()) throw Error("objective: no intermediates supplied");
  TermSums out;
  bool first = true;
  for (const auto& c : chunks) {
    Tensor recon =
        g.scale(g.reduce_sum(g.square(g.sub(c.x_hat, c.x))), -0.5);
    Tensor kl1 = kl_sum(g, c.mu1, c.log_var1, priors.p1);
    Tensor kl2 = kl_sum(g, c.mu2, c.log_var2, priors.p2);
    Tensor ce1 = expected_log_prob_sum(g, c.mu1, c.log_var1, priors.p1);
    Tensor ce2 = expected_log_prob_sum(g, c.mu2, c.log_var2, priors.p2);
    Tensor ne2 = neg_entropy_sum(g, c.log_var2);
    if (first) {
      out.recon_sum = recon;
      out.kl1_sum = kl1;
      out.kl2_sum = kl2;
      out.ce1p1_sum = ce1;
      out.ce2p2_sum = ce2;
      out.negent2_sum = ne2;
      first = false;
    } else {
      out.recon_sum = g.add(out.recon_sum, recon);
      out.kl1_sum = g.add(out.kl1_sum, kl1);
      out.kl2_sum = g.add(out.kl2_sum, kl2);
      out.ce1p1_sum = g.add(out.ce1p1_sum, ce1);
      out.ce2p2_sum = g.add(out.ce2p2_sum, ce2);
      out.negent2_sum = g.add(out.negent2_sum, ne2);
    }
    out.rows += c.rows;
  }
  return out;
}

}  // namespace obj_detail

// log p(x | z1, z2) under a unit-variance Gaussian decoder, constants
// dropped: -1/2 * mean-over-rows sum_j (x_j - x_hat_j)^2.
inline Tensor recon_log_likelihood(Graph& g, Tensor x, Tensor x_hat) {
  const Shape& sx = g.shape_of(x);
  const Shape& sh = g.shape_of(x_hat);
  if (sx != sh)
    throw ShapeError("recon_log_likelihood: shapes differ " + shape_str(sx) +
                     " vs " + shape_str(sh));
  const int rows = sx.size() == 2 ? sx[0] : 1;
  return g.scale(g.reduce_sum(g.square(g.sub(x_hat, x))), -0.5 / rows);
}

inline ProbeStats probe_stats(Graph& g,
                              const std::vector<FvaeIntermediates>& chunks,
                              const LatentPriors& priors) {
  ProbeStats s;
  int rows = 0;
  for (const auto& c : chunks) {
    const auto& mu1 = g.values_of(c.mu1);
    const auto& lv1 = g.values_of(c.log_var1);
    const auto& mu2 = g.values_of(c.mu2);
    const auto& lv2 = g.values_of(c.log_var2);
    const int d1 = g.shape_of(c.mu1)[1];
    const int d2 = g.shape_of(c.mu2)[1];
    if (d1 != d2) s.decomposable = false;
    for (int i = 0; i < c.rows; ++i) {
      DiagGaussian q1 = obj_detail::row_gaussian(mu1, lv1, i, d1);
      DiagGaussian q2 = obj_detail::row_gaussian(mu2, lv2, i, d2);
      if (s.decomposable) {
        s.lambda += lambda_mismatch(q2, priors.p1, priors.p2);
        s.delta += delta_discrepancy(q1, q2, priors.p1);
        s.w2 += wasserstein2_diag(q1, q2);
      }
      s.gamma += cross_entropy(q2, priors.p2) - cross_entropy(q1, priors.p1);
      s.kl1 += kl_diag(q1, priors.p1);
      s.kl2 += kl_diag(q2, priors.p2);
    }
    rows += c.rows;
  }
  if (rows > 0) {
    const double inv = 1.0 / rows;
    s.lambda *= inv;
    s.delta *= inv;
    s.gamma *= inv;
    s.w2 *= inv;
    s.kl1 *= inv;
    s.kl2 *= inv;
  }
  return s;
}

// alpha * E[log p(x|z1,z2)] - beta * KL(q1||p1) + delta * Gamma, with the
// expectation of the log-prior ratio (Gamma) integrated in closed form.
inline std::pair<Tensor, LossBreakdown> fvae_elbo(
    Graph& g, const std::vector<FvaeIntermediates>& chunks,
    const ObjectiveCoeffs& coeffs, const LatentPriors& priors) {
  for (double v : {coeffs.alpha, coeffs.beta, coeffs.delta})
    if (!std::isfinite(v)) throw ConfigError("fvae_elbo: non-finite coefficient");
  obj_detail::TermSums t = obj_detail::term_sums(g, chunks, priors);
  const double inv = 1.0 / t.rows;
  Tensor recon = g.scale(t.recon_sum, inv);
  Tensor kl1 = g.scale(t.kl1_sum, inv);
  Tensor gamma = g.scale(g.sub(t.ce2p2_sum, t.ce1p1_sum), inv);
  Tensor elbo = g.add(g.add(g.scale(recon, coeffs.alpha),
                            g.scale(kl1, -coeffs.beta)),
                      g.scale(gamma, coeffs.delta));
  LossBreakdown b;
  b.recon = recon.item();
  b.kl1 = kl1.item();
  b.kl2 = g.values_of(t.kl2_sum)[0] * inv;
  b.gamma = gamma.item();
  ProbeStats ps = probe_stats(g, chunks, priors);
  b.lambda_mismatch = ps.lambda;
  b.delta_discrepancy = ps.delta;
  b.elbo = elbo.item();
  return {elbo, b};
}

// E[log p(x|z1,z2)] - KL(q1||p1) - KL(q2||p2).
inline std::pair<Tensor, LossBreakdown> vae2lat_elbo(
    Graph& g, const std::vector<FvaeIntermediates>& chunks,
    const LatentPriors& priors) {
  obj_detail::TermSums t = obj_detail::term_sums(g, chunks, priors);
  const double inv = 1.0 / t.rows;
  Tensor recon = g.scale(t.recon_sum, inv);
  Tensor kl1 = g.scale(t.kl1_sum, inv);
  Tensor kl2 = g.scale(t.kl2_sum, inv);
  Tensor elbo = g.sub(recon, g.add(kl1, kl2));
  LossBreakdown b;
  b.recon = recon.item();
  b.kl1 = kl1.item();
  b.kl2 = kl2.item();
  ProbeStats ps = probe_stats(g, chunks, priors);
  b.lambda_mismatch = ps.lambda;
  b.delta_discrepancy = ps.delta;
  b.gamma = ps.gamma;
  b.elbo = elbo.item();
  return {elbo, b};
}

// E[log p(x|z1,z2)] - beta * KL(q1||p1) - beta * KL(q2||p2).
inline std::pair<Tensor, LossBreakdown> beta_vae2lat_elbo(
    Graph& g, const std::vector<FvaeIntermediates>& chunks,
    const LatentPriors& priors, double beta) {
  if (!std::isfinite(beta))
    throw ConfigError("beta_vae2lat_elbo: non-finite beta");
  obj_detail::TermSums t = obj_detail::term_sums(g, chunks, priors);
  const double inv = 1.0 / t.rows;
  Tensor recon = g.scale(t.recon_sum, inv);
  Tensor kl1 = g.scale(t.kl1_sum, inv);
  Tensor kl2 = g.scale(t.kl2_sum, inv);
  Tensor elbo = g.sub(recon, g.scale(g.add(kl1, kl2), beta));
  LossBreakdown b;
  b.recon = recon.item();
  b.kl1 = kl1.item();
  b.kl2 = kl2.item();
  ProbeStats ps = probe_stats(g, chunks, priors);
  b.lambda_mismatch = ps.lambda;
  b.delta_discrepancy = ps.delta;
  b.gamma = ps.gamma;
  b.elbo = elbo.item();
  return {elbo, b};
}

// The pre-rearrangement objective: the two-latent ELBO plus the closed-form
// cross term E[log q2(z2|x)] - E[log p1(z1)]. Algebraically identical to
// fvae_elbo at alpha = beta = delta = 1 when both use the same z samples.
inline Tensor cross_term_objective(Graph& g,
                                   const std::vector<FvaeIntermediates>& chunks,
                                   const LatentPriors& priors) {
  obj_detail::TermSums t = obj_detail::term_sums(g, chunks, priors);
  const double inv = 1.0 / t.rows;
  Tensor recon = g.scale(t.recon_sum, inv);
  Tensor kl1 = g.scale(t.kl1_sum, inv);
  Tensor kl2 = g.scale(t.kl2_sum, inv);
  Tensor vae2lat = g.sub(recon, g.add(kl1, kl2));
  Tensor cross = g.scale(g.sub(t.negent2_sum, t.ce1p1_sum), inv);
  return g.add(vae2lat, cross);
}

// Softmax cross-entropy over possibly chunked logits; mean over rows.
// Non-negative; equals ln(num_classes) for uniform logits.
inline Tensor softmax_cross_entropy(Graph& g,
                                    const std::vector<Tensor>& logit_chunks,
                                    const std::vector<int>& labels,
                                    int num_classes) {
  Tensor sum;
  bool first = true;
  int row0 = 0;
  for (const Tensor& chunk : logit_chunks) {
    const Shape& s = g.shape_of(chunk);
    if (s.size() != 2 || s[1] != num_classes)
      throw ShapeError("softmax_cross_entropy: logits " + shape_str(s) +
                       " vs num_classes " + std::to_string(num_classes));
    const int rows = s[0];
    std::vector<double> onehot(static_cast<size_t>(rows) * num_classes, 0.0);
    for (int i = 0; i < rows; ++i) {
      const int y = labels[static_cast<size_t>(row0 + i)];
      if (y < 0 || y >= num_classes)
        throw ValueError("softmax_cross_entropy: label " + std::to_string(y) +
                         " out of range");
      onehot[static_cast<size_t>(i) * num_classes + y] = 1.0;
    }
    Tensor picked = g.reduce_sum(
        g.mul(g.log_softmax(chunk), g.constant({rows, num_classes}, onehot)));
    sum = first ? picked : g.add(sum, picked);
    first = false;
    row0 += rows;
  }
  if (first) throw Error("softmax_cross_entropy: no logits");
  return g.scale(sum, -1.0 / row0);
}

// total = downstream - sum_l lambda_l * elbo_l (minimized).
inline std::pair<Tensor, LossBreakdown> total_loss(
    Graph& g, Tensor downstream, const std::vector<Tensor>& per_layer_elbos,
    const ObjectiveCoeffs& coeffs) {
  if (per_layer_elbos.size() != coeffs.lambda_per_layer.size())
    throw ConfigError("total_loss: " + std::to_string(per_layer_elbos.size()) +
                      " layer objectives vs " +
                      std::to_string(coeffs.lambda_per_layer.size()) +
                      " lambda weights");
  Tensor total = downstream;
  for (size_t l = 0; l < per_layer_elbos.size(); ++l)
    total = g.add(total,
                  g.scale(per_layer_elbos[l], -coeffs.lambda_per_layer[l]));
  LossBreakdown b;
  b.downstream = downstream.item();
  for (const Tensor& e : per_layer_elbos) b.elbo += e.item();
  b.total = total.item();
  return {total, b};
}

}  // namespace fvae
