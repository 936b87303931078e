#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <unordered_map>
#include <vector>

#include "fvae/error.hpp"
#include "fvae/rng.hpp"
#include "fvae/tensor.hpp"

namespace fvae {

struct Param {
  std::string name;
  Shape shape;
  std::vector<double> value;
  bool trainable = true;

  size_t size() const { return value.size(); }
};

// Insertion-ordered parameter set; iteration order is deterministic.
class ParamStore {
 public:
  Param& add(const std::string& name, Shape shape, bool trainable) {
    if (index_.count(name))
      throw Error("parameter '" + name + "' already exists");
    Param p;
    p.name = name;
    p.shape = std::move(shape);
    p.value.assign(numel(p.shape), 0.0);
    p.trainable = trainable;
    index_.emplace(name, params_.size());
    params_.push_back(std::move(p));
    return params_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Param& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("no parameter named '" + name + "'");
    return params_[it->second];
  }

  const Param& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("no parameter named '" + name + "'");
    return params_[it->second];
  }

  std::vector<Param>& all() { return params_; }
  const std::vector<Param>& all() const { return params_; }
  size_t count() const { return params_.size(); }

  size_t total_values(bool trainable_only) const {
    size_t n = 0;
    for (const auto& p : params_)
      if (!trainable_only || p.trainable) n += p.size();
    return n;
  }

 private:
  std::vector<Param> params_;
  std::unordered_map<std::string, size_t> index_;
};

inline void init_uniform_fan_in(Param& p, int fan_in, Pcg64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : p.value) v = rng.next_uniform(-bound, bound);
}

// Registers a parameter as a graph leaf (once per graph); requires_grad
// follows trainability. Repeated uses share the same leaf node.
inline Tensor use_param(Graph& g, const Param& p) {
  if (g.has_leaf(p.name)) return g.leaf_tensor(p.name);
  return g.leaf(p.name, p.shape, p.value, p.trainable);
}

// FNV-1a over the raw value bytes; used to verify parameters stayed frozen.
inline uint64_t param_hash(const Param& p) {
  uint64_t h = fnv1a64(p.name);
  for (double v : p.value) {
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffu;
      h *= 1099511628211ull;
    }
  }
  return h;
}

// Linear layer y = x W^T + b over row-major batches. The layer owns nothing;
// it names parameters inside a ParamStore.
struct Linear {
  std::string weight_name;
  std::string bias_name;  // empty => no bias
  int d_in = 0, d_out = 0;

  static Linear create(ParamStore& store, const std::string& prefix, int d_in,
                       int d_out, bool trainable, bool with_bias,
                       Pcg64& init_rng) {
    Linear l;
    l.d_in = d_in;
    l.d_out = d_out;
    l.weight_name = prefix + ".weight";
    Param& w = store.add(l.weight_name, {d_out, d_in}, trainable);
    init_uniform_fan_in(w, d_in, init_rng);
    if (with_bias) {
      l.bias_name = prefix + ".bias";
      store.add(l.bias_name, {d_out}, trainable);  // biases start at zero
    }
    return l;
  }

  Tensor forward(Graph& g, const ParamStore& store, Tensor x) const {
    Tensor y = g.matmul(x, g.transpose(use_param(g, store.at(weight_name))));
    if (!bias_name.empty())
      y = g.bias_add(y, use_param(g, store.at(bias_name)));
    return y;
  }
};

}  // namespace fvae
