#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fvae/error.hpp"
#include "fvae/nn.hpp"

namespace fvae {

// Linear warmup from 0 to base_lr over warmup_fraction of the run, then
// linear decay to 0 at total_steps.
inline double lr_at(int64_t step, int64_t total_steps, double warmup_fraction,
                    double base_lr) {
  if (total_steps <= 0) return 0.0;
  if (step < 0) step = 0;
  if (step >= total_steps) return 0.0;
  const auto warmup = static_cast<int64_t>(
      std::llround(warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (warmup >= total_steps) return base_lr;
  return base_lr * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup);
}

enum class NonFinitePolicy { Abort, SkipStep };

// Adaptive moment estimation with bias correction and decoupled weight decay:
//   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
//   p <- p - lr * ( m_hat / (sqrt(v_hat) + eps) + wd * p )
// Frozen parameters are never touched.
class AdamW {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  explicit AdamW(const ParamStore& store) {
    for (const auto& p : store.all())
      if (p.trainable) {
        m_[p.name].assign(p.size(), 0.0);
        v_[p.name].assign(p.size(), 0.0);
      }
  }

  int64_t step_count() const { return t_; }

  // grads maps parameter name -> gradient (absent entries mean zero grad).
  // Returns false when a non-finite gradient was found and the step skipped.
  bool step(ParamStore& store,
            const std::map<std::string, const std::vector<double>*>& grads,
            double lr_t, double weight_decay,
            NonFinitePolicy policy = NonFinitePolicy::Abort) {
    for (const auto& [name, g] : grads) {
      if (g == nullptr) continue;
      for (double x : *g)
        if (!std::isfinite(x)) {
          if (policy == NonFinitePolicy::Abort)
            throw ValueError("optimizer: non-finite gradient in '" + name +
                             "'");
          return false;
        }
    }
    ++t_;
    const double corr1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double corr2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (auto& p : store.all()) {
      if (!p.trainable) continue;
      auto& m = m_.at(p.name);
      auto& v = v_.at(p.name);
      const std::vector<double>* g = nullptr;
      if (auto it = grads.find(p.name); it != grads.end()) g = it->second;
      for (size_t j = 0; j < p.size(); ++j) {
        const double gj = g ? (*g)[j] : 0.0;
        m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * gj;
        v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * gj * gj;
        const double m_hat = m[j] / corr1;
        const double v_hat = v[j] / corr2;
        p.value[j] -=
            lr_t * (m_hat / (std::sqrt(v_hat) + kEps) + weight_decay * p.value[j]);
      }
    }
    return true;
  }

  const std::map<std::string, std::vector<double>>& moments_m() const {
    return m_;
  }
  const std::map<std::string, std::vector<double>>& moments_v() const {
    return v_;
  }

  void restore(int64_t t, std::map<std::string, std::vector<double>> m,
               std::map<std::string, std::vector<double>> v) {
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  int64_t t_ = 0;
  std::map<std::string, std::vector<double>> m_;
  std::map<std::string, std::vector<double>> v_;
};

}  // namespace fvae
