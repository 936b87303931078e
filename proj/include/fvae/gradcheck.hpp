#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fvae/tensor.hpp"

namespace fvae {

// A named differentiable input for gradcheck.
struct GradCheckLeaf {
  std::string name;
  Shape shape;
  std::vector<double> value;
};

// Builds a scalar tensor from the given leaves (registered in order).
using GraphBuilder =
    std::function<Tensor(Graph&, const std::vector<Tensor>&)>;

struct GradCheckEntry {
  std::string leaf;
  double max_rel_err = 0.0;
  bool ok = false;
  std::string note;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool ok = true;
};

namespace detail {

inline double rebuild_scalar(const GraphBuilder& build,
                             const std::vector<GradCheckLeaf>& leaves) {
  Graph g;
  std::vector<Tensor> ts;
  ts.reserve(leaves.size());
  for (const auto& l : leaves) ts.push_back(g.leaf(l.name, l.shape, l.value, false));
  return build(g, ts).item();
}

}  // namespace detail

// Compares analytic reverse-mode gradients against central finite
// differences, per leaf element. Relative error is measured against
// max(1, |analytic|, |numeric|) so near-zero gradients are judged on
// absolute error.
inline GradCheckReport gradcheck(std::vector<GradCheckLeaf> leaves,
                                 const GraphBuilder& build, double tol,
                                 double step = 1e-5) {
  GradCheckReport report;

  Graph g;
  std::vector<Tensor> ts;
  ts.reserve(leaves.size());
  for (const auto& l : leaves)
    ts.push_back(g.leaf(l.name, l.shape, l.value, true));
  Tensor out = build(g, ts);
  if (out.size() != 1)
    throw ShapeError("gradcheck: builder must produce a scalar, got " +
                     shape_str(out.shape()));
  g.backward(out);

  for (size_t li = 0; li < leaves.size(); ++li) {
    GradCheckEntry entry;
    entry.leaf = leaves[li].name;
    std::vector<double> analytic(leaves[li].value.size(), 0.0);
    if (ts[li].has_grad()) analytic = ts[li].grad();

    bool finite = true;
    double worst = 0.0;
    for (size_t j = 0; j < leaves[li].value.size() && finite; ++j) {
      const double orig = leaves[li].value[j];
      leaves[li].value[j] = orig + step;
      const double fp = detail::rebuild_scalar(build, leaves);
      leaves[li].value[j] = orig - step;
      const double fm = detail::rebuild_scalar(build, leaves);
      leaves[li].value[j] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      if (!std::isfinite(numeric) || !std::isfinite(analytic[j])) {
        finite = false;
        break;
      }
      const double denom =
          std::max({1.0, std::fabs(analytic[j]), std::fabs(numeric)});
      worst = std::max(worst, std::fabs(analytic[j] - numeric) / denom);
    }

    entry.max_rel_err = worst;
    if (!finite) {
      entry.ok = false;
      entry.note = "non-finite value encountered";
    } else {
      entry.ok = worst < tol;
    }
    report.ok = report.ok && entry.ok;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace fvae
