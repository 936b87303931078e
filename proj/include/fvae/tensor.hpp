#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fvae/error.hpp"

namespace fvae {

using Shape = std::vector<int>;

inline size_t numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) n *= static_cast<size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

enum class Op : uint8_t {
  Leaf,
  MatMul,
  Transpose,
  Add,
  Sub,
  Mul,
  Scale,
  BiasAdd,
  Exp,
  Log,
  Relu,
  LogSoftmax,
  Square,
  ReduceSum,
  ReduceMean,
  ConcatCols,
  SliceCols,
  Dropout,
  Reparam,
};

class Graph;

// Lightweight handle into a Graph node. Valid while the graph is alive.
class Tensor {
 public:
  Tensor() = default;

  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }
  Graph* graph() const { return graph_; }

  const Shape& shape() const;
  size_t size() const;
  const std::vector<double>& values() const;
  bool requires_grad() const;
  // Populated only after Graph::backward reached this node.
  const std::vector<double>& grad() const;
  bool has_grad() const;
  double item() const;  // scalar value

 private:
  friend class Graph;
  Tensor(Graph* g, int id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  int id_ = -1;
};

// Append-only tape of eagerly evaluated ops with reverse-mode backward.
// Node values are immutable after creation; one graph per training step.
class Graph {
 public:
  explicit Graph(bool check_finite = false) : check_finite_(check_finite) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool check_finite() const { return check_finite_; }
  size_t num_nodes() const { return nodes_.size(); }

  // -- leaves ---------------------------------------------------------------

  Tensor leaf(const std::string& name, Shape shape, std::vector<double> data,
              bool requires_grad) {
    if (numel(shape) != data.size())
      throw ShapeError("leaf '" + name + "': shape " + shape_str(shape) +
                       " does not match data length " +
                       std::to_string(data.size()));
    if (!name.empty()) {
      if (named_.count(name))
        throw Error("leaf '" + name + "' registered twice in one graph");
      named_.emplace(name, static_cast<int>(nodes_.size()));
    }
    Node n;
    n.op = Op::Leaf;
    n.shape = std::move(shape);
    n.value = std::move(data);
    n.requires_grad = requires_grad;
    n.name = name;
    return push(std::move(n), "leaf");
  }

  Tensor constant(Shape shape, std::vector<double> data) {
    return leaf("", std::move(shape), std::move(data), false);
  }

  Tensor scalar(double v) { return constant({}, {v}); }

  Tensor full(Shape shape, double v) {
    std::vector<double> data(numel(shape), v);
    return constant(std::move(shape), std::move(data));
  }

  bool has_leaf(const std::string& name) const { return named_.count(name); }

  Tensor leaf_tensor(const std::string& name) {
    auto it = named_.find(name);
    if (it == named_.end()) throw Error("no leaf named '" + name + "'");
    return Tensor(this, it->second);
  }

  std::vector<std::string> leaf_names() const {
    std::vector<std::string> out;
    for (const auto& n : nodes_)
      if (n.op == Op::Leaf && !n.name.empty()) out.push_back(n.name);
    return out;
  }

  // Gradient of a named leaf after backward; null if absent or unreached.
  const std::vector<double>* grad_by_name(const std::string& name) const {
    auto it = named_.find(name);
    if (it == named_.end()) return nullptr;
    const Node& n = nodes_[static_cast<size_t>(it->second)];
    return n.grad.empty() ? nullptr : &n.grad;
  }

  // -- ops ------------------------------------------------------------------

  Tensor matmul(Tensor a, Tensor b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.shape.size() != 2 || nb.shape.size() != 2 ||
        na.shape[1] != nb.shape[0])
      throw ShapeError("matmul: incompatible shapes " + shape_str(na.shape) +
                       " and " + shape_str(nb.shape));
    const int m = na.shape[0], k = na.shape[1], p = nb.shape[1];
    Node n = binary(Op::MatMul, a, b, {m, p});
    const double* A = na.value.data();
    const double* B = nb.value.data();
    double* C = n.value.data();
    for (int i = 0; i < m; ++i) {
      double* crow = C + static_cast<size_t>(i) * p;
      for (int kk = 0; kk < k; ++kk) {
        const double av = A[static_cast<size_t>(i) * k + kk];
        const double* brow = B + static_cast<size_t>(kk) * p;
        for (int j = 0; j < p; ++j) crow[j] += av * brow[j];
      }
    }
    return push(std::move(n), "matmul");
  }

  Tensor transpose(Tensor a) {
    const Node& na = node(a);
    if (na.shape.size() != 2)
      throw ShapeError("transpose: expected 2-d tensor, got " +
                       shape_str(na.shape));
    const int m = na.shape[0], c = na.shape[1];
    Node n = unary(Op::Transpose, a, {c, m});
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < c; ++j)
        n.value[static_cast<size_t>(j) * m + i] =
            na.value[static_cast<size_t>(i) * c + j];
    return push(std::move(n), "transpose");
  }

  Tensor add(Tensor a, Tensor b) { return elementwise(Op::Add, a, b, "add"); }
  Tensor sub(Tensor a, Tensor b) { return elementwise(Op::Sub, a, b, "sub"); }
  Tensor mul(Tensor a, Tensor b) { return elementwise(Op::Mul, a, b, "mul"); }

  Tensor scale(Tensor a, double s) {
    const Node& na = node(a);
    Node n = unary(Op::Scale, a, na.shape);
    n.attr = s;
    for (size_t i = 0; i < na.value.size(); ++i) n.value[i] = s * na.value[i];
    return push(std::move(n), "scale");
  }

  // Row-broadcast bias: (m x d) + (d).
  Tensor bias_add(Tensor x, Tensor bias) {
    const Node& nx = node(x);
    const Node& nb = node(bias);
    if (nx.shape.size() != 2 || nb.shape.size() != 1 ||
        nx.shape[1] != nb.shape[0])
      throw ShapeError("bias_add: incompatible shapes " + shape_str(nx.shape) +
                       " and " + shape_str(nb.shape));
    const int m = nx.shape[0], d = nx.shape[1];
    Node n = binary(Op::BiasAdd, x, bias, nx.shape);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < d; ++j)
        n.value[static_cast<size_t>(i) * d + j] =
            nx.value[static_cast<size_t>(i) * d + j] + nb.value[j];
    return push(std::move(n), "bias_add");
  }

  Tensor exp(Tensor a) {
    return map(Op::Exp, a, "exp", [](double v) { return std::exp(v); });
  }

  Tensor log(Tensor a) {
    return map(Op::Log, a, "log", [](double v) { return std::log(v); });
  }

  Tensor relu(Tensor a) {
    return map(Op::Relu, a, "relu",
               [](double v) { return v > 0.0 ? v : 0.0; });
  }

  Tensor square(Tensor a) {
    return map(Op::Square, a, "square", [](double v) { return v * v; });
  }

  // Row-wise log-softmax over a 2-d tensor.
  Tensor log_softmax(Tensor a) {
    const Node& na = node(a);
    if (na.shape.size() != 2)
      throw ShapeError("log_softmax: expected 2-d tensor, got " +
                       shape_str(na.shape));
    const int m = na.shape[0], d = na.shape[1];
    Node n = unary(Op::LogSoftmax, a, na.shape);
    for (int i = 0; i < m; ++i) {
      const double* row = na.value.data() + static_cast<size_t>(i) * d;
      double mx = row[0];
      for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
      double s = 0.0;
      for (int j = 0; j < d; ++j) s += std::exp(row[j] - mx);
      const double lse = mx + std::log(s);
      for (int j = 0; j < d; ++j)
        n.value[static_cast<size_t>(i) * d + j] = row[j] - lse;
    }
    return push(std::move(n), "log_softmax");
  }

  Tensor reduce_sum(Tensor a) {
    const Node& na = node(a);
    Node n = unary(Op::ReduceSum, a, {});
    double s = 0.0;
    for (double v : na.value) s += v;
    n.value[0] = s;
    return push(std::move(n), "reduce_sum");
  }

  Tensor reduce_mean(Tensor a) {
    const Node& na = node(a);
    Node n = unary(Op::ReduceMean, a, {});
    double s = 0.0;
    for (double v : na.value) s += v;
    n.value[0] = s / static_cast<double>(na.value.size());
    return push(std::move(n), "reduce_mean");
  }

  // Concatenation of two 2-d tensors along the last axis.
  Tensor concat_cols(Tensor a, Tensor b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.shape.size() != 2 || nb.shape.size() != 2 ||
        na.shape[0] != nb.shape[0])
      throw ShapeError("concat_cols: incompatible shapes " +
                       shape_str(na.shape) + " and " + shape_str(nb.shape));
    const int m = na.shape[0], ca = na.shape[1], cb = nb.shape[1];
    Node n = binary(Op::ConcatCols, a, b, {m, ca + cb});
    for (int i = 0; i < m; ++i) {
      double* row = n.value.data() + static_cast<size_t>(i) * (ca + cb);
      const double* ra = na.value.data() + static_cast<size_t>(i) * ca;
      const double* rb = nb.value.data() + static_cast<size_t>(i) * cb;
      for (int j = 0; j < ca; ++j) row[j] = ra[j];
      for (int j = 0; j < cb; ++j) row[ca + j] = rb[j];
    }
    return push(std::move(n), "concat_cols");
  }

  // Column slice [begin,end) of a 2-d tensor.
  Tensor slice_cols(Tensor a, int begin, int end) {
    const Node& na = node(a);
    if (na.shape.size() != 2)
      throw ShapeError("slice_cols: expected 2-d tensor, got " +
                       shape_str(na.shape));
    if (begin < 0 || end <= begin || end > na.shape[1])
      throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," +
                       std::to_string(end) + ") out of bounds for " +
                       shape_str(na.shape));
    const int m = na.shape[0], c = na.shape[1], w = end - begin;
    Node n = unary(Op::SliceCols, a, {m, w});
    n.i0 = begin;
    n.i1 = end;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        n.value[static_cast<size_t>(i) * w + j] =
            na.value[static_cast<size_t>(i) * c + begin + j];
    return push(std::move(n), "slice_cols");
  }

  // Inverted dropout with an externally supplied 0/1 mask: x * mask / (1-p).
  Tensor dropout(Tensor x, Tensor mask, double p) {
    const Node& nx = node(x);
    const Node& nm = node(mask);
    if (nx.shape != nm.shape)
      throw ShapeError("dropout: mask shape " + shape_str(nm.shape) +
                       " does not match input " + shape_str(nx.shape));
    if (!(p >= 0.0 && p < 1.0))
      throw ValueError("dropout: p must be in [0,1), got " + std::to_string(p));
    if (nm.requires_grad)
      throw Error("dropout: mask must not require gradients");
    Node n = binary(Op::Dropout, x, mask, nx.shape);
    n.attr = 1.0 / (1.0 - p);
    for (size_t i = 0; i < nx.value.size(); ++i)
      n.value[i] = nx.value[i] * nm.value[i] * n.attr;
    return push(std::move(n), "dropout");
  }

  // z = mu + exp(0.5*log_var) * eps; eps is a non-differentiable input.
  Tensor reparameterize(Tensor mu, Tensor log_var, Tensor eps) {
    const Node& nm = node(mu);
    const Node& nv = node(log_var);
    const Node& ne = node(eps);
    if (nm.shape != nv.shape || nm.shape != ne.shape)
      throw ShapeError("reparameterize: shapes differ: mu " +
                       shape_str(nm.shape) + ", log_var " +
                       shape_str(nv.shape) + ", eps " + shape_str(ne.shape));
    if (ne.requires_grad)
      throw Error("reparameterize: eps must not require gradients");
    Node n;
    n.op = Op::Reparam;
    n.in = {mu.id_, log_var.id_, eps.id_};
    n.shape = nm.shape;
    n.value.resize(nm.value.size());
    n.requires_grad = nm.requires_grad || nv.requires_grad;
    for (size_t i = 0; i < nm.value.size(); ++i)
      n.value[i] = nm.value[i] + std::exp(0.5 * nv.value[i]) * ne.value[i];
    return push(std::move(n), "reparameterize");
  }

  // -- backward -------------------------------------------------------------

  void backward(Tensor seed) {
    if (seed.graph_ != this) throw Error("backward: seed not in this graph");
    Node& sn = nodes_[static_cast<size_t>(seed.id_)];
    if (numel(sn.shape) != 1)
      throw ShapeError("backward: seed must be scalar, got " +
                       shape_str(sn.shape));
    ensure_grad(sn);
    sn.grad[0] = 1.0;
    for (int i = seed.id_; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.grad.empty() || n.op == Op::Leaf) continue;
      accumulate(n);
    }
  }

  // -- node access ----------------------------------------------------------

  const Shape& shape_of(const Tensor& t) const { return node(t).shape; }

  const std::vector<double>& values_of(const Tensor& t) const {
    return node(t).value;
  }

  const std::vector<double>& grad_of(const Tensor& t) const {
    const Node& n = node(t);
    if (n.grad.empty())
      throw Error("grad: no gradient recorded for node " +
                  std::to_string(t.id_));
    return n.grad;
  }

  bool has_grad(const Tensor& t) const { return !node(t).grad.empty(); }

  bool requires_grad_of(const Tensor& t) const {
    return node(t).requires_grad;
  }

 private:
  struct Node {
    Op op = Op::Leaf;
    std::vector<int> in;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    double attr = 0.0;  // scale factor / dropout keep-scale
    int i0 = 0, i1 = 0; // slice bounds
    std::string name;
  };

  const Node& node(const Tensor& t) const {
    if (t.graph_ != this || t.id_ < 0 ||
        t.id_ >= static_cast<int>(nodes_.size()))
      throw Error("tensor handle does not belong to this graph");
    return nodes_[static_cast<size_t>(t.id_)];
  }

  Node unary(Op op, Tensor a, Shape out_shape) {
    const Node& na = node(a);
    Node n;
    n.op = op;
    n.in = {a.id_};
    n.shape = std::move(out_shape);
    n.value.resize(numel(n.shape));
    n.requires_grad = na.requires_grad;
    return n;
  }

  Node binary(Op op, Tensor a, Tensor b, Shape out_shape) {
    const Node& na = node(a);
    const Node& nb = node(b);
    Node n;
    n.op = op;
    n.in = {a.id_, b.id_};
    n.shape = std::move(out_shape);
    n.value.resize(numel(n.shape));
    n.requires_grad = na.requires_grad || nb.requires_grad;
    return n;
  }

  Tensor elementwise(Op op, Tensor a, Tensor b, const char* opname) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (na.shape != nb.shape)
      throw ShapeError(std::string(opname) + ": shape mismatch " +
                       shape_str(na.shape) + " vs " + shape_str(nb.shape));
    Node n = binary(op, a, b, na.shape);
    const size_t len = na.value.size();
    for (size_t i = 0; i < len; ++i) {
      switch (op) {
        case Op::Add: n.value[i] = na.value[i] + nb.value[i]; break;
        case Op::Sub: n.value[i] = na.value[i] - nb.value[i]; break;
        case Op::Mul: n.value[i] = na.value[i] * nb.value[i]; break;
        default: break;
      }
    }
    return push(std::move(n), opname);
  }

  template <typename F>
  Tensor map(Op op, Tensor a, const char* opname, F f) {
    const Node& na = node(a);
    Node n = unary(op, a, na.shape);
    for (size_t i = 0; i < na.value.size(); ++i) n.value[i] = f(na.value[i]);
    return push(std::move(n), opname);
  }

  Tensor push(Node n, const char* opname) {
    if (check_finite_) {
      for (double v : n.value)
        if (!std::isfinite(v))
          throw ValueError(std::string(opname) +
                           ": non-finite value in output of shape " +
                           shape_str(n.shape));
    }
    nodes_.push_back(std::move(n));
    return Tensor(this, static_cast<int>(nodes_.size()) - 1);
  }

  void ensure_grad(Node& n) {
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  }

  std::vector<double>* grad_into(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad) return nullptr;
    ensure_grad(n);
    return &n.grad;
  }

  void accumulate(Node& n) {
    const std::vector<double>& g = n.grad;
    switch (n.op) {
      case Op::MatMul: {
        Node& a = nodes_[static_cast<size_t>(n.in[0])];
        Node& b = nodes_[static_cast<size_t>(n.in[1])];
        const int m = a.shape[0], k = a.shape[1], p = b.shape[1];
        if (a.requires_grad) {
          ensure_grad(a);
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < p; ++j) {
              const double gv = g[static_cast<size_t>(i) * p + j];
              if (gv == 0.0) continue;
              for (int kk = 0; kk < k; ++kk)
                a.grad[static_cast<size_t>(i) * k + kk] +=
                    gv * b.value[static_cast<size_t>(kk) * p + j];
            }
        }
        if (b.requires_grad) {
          ensure_grad(b);
          for (int kk = 0; kk < k; ++kk)
            for (int i = 0; i < m; ++i) {
              const double av = a.value[static_cast<size_t>(i) * k + kk];
              if (av == 0.0) continue;
              for (int j = 0; j < p; ++j)
                b.grad[static_cast<size_t>(kk) * p + j] +=
                    av * g[static_cast<size_t>(i) * p + j];
            }
        }
        break;
      }
      case Op::Transpose: {
        Node& a = nodes_[static_cast<size_t>(n.in[0])];
        if (!a.requires_grad) break;
        ensure_grad(a);
        const int m = a.shape[0], c = a.shape[1];
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < c; ++j)
            a.grad[static_cast<size_t>(i) * c + j] +=
                g[static_cast<size_t>(j) * m + i];
        break;
      }
      case Op::Add:
      case Op::Sub: {
        auto* ga = grad_into(n.in[0]);
        auto* gb = grad_into(n.in[1]);
        const double sb = n.op == Op::Sub ? -1.0 : 1.0;
        for (size_t i = 0; i < g.size(); ++i) {
          if (ga) (*ga)[i] += g[i];
          if (gb) (*gb)[i] += sb * g[i];
        }
        break;
      }
      case Op::Mul: {
        Node& a = nodes_[static_cast<size_t>(n.in[0])];
        Node& b = nodes_[static_cast<size_t>(n.in[1])];
        if (a.requires_grad) {
          ensure_grad(a);
          for (size_t i = 0; i < g.size(); ++i) a.grad[i] += g[i] * b.value[i];
        }
        if (b.requires_grad) {
          ensure_grad(b);
          for (size_t i = 0; i < g.size(); ++i) b.grad[i] += g[i] * a.value[i];
        }
        break;
      }
      case Op::Scale: {
        if (auto* ga = grad_into(n.in[0]))
          for (size_t i = 0; i < g.size(); ++i) (*ga)[i] += n.attr * g[i];
        break;
      }
      case Op::BiasAdd: {
        Node& x = nodes_[static_cast<size_t>(n.in[0])];
        Node& b = nodes_[static_cast<size_t>(n.in[1])];
        const int m = x.shape[0], d = x.shape[1];
        if (x.requires_grad) {
          ensure_grad(x);
          for (size_t i = 0; i < g.size(); ++i) x.grad[i] += g[i];
        }
        if (b.requires_grad) {
          ensure_grad(b);
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < d; ++j)
              b.grad[j] += g[static_cast<size_t>(i) * d + j];
        }
        break;
      }
      case Op::Exp: {
        if (auto* ga = grad_into(n.in[0]))
          for (size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * n.value[i];
        break;
      }
      case Op::Log: {
        Node& a = nodes_[static_cast<size_t>(n.in[0])];
        if (!a.requires_grad) break;
        ensure_grad(a);
        for (size_t i = 0; i < g.size(); ++i) a.grad[i] += g[i] / a.value[i];
        break;
      }
      case Op::Relu: {
        Node& a = nodes_[static_cast<size_t>(n.in[0])];
        if (!a.requires_grad) break;
        ensure_grad(a);
        // Subgradient at exactly 0 is 0.
        for (size_t i = 0; i < g.size(); ++i)
          if (a.value[i] > 0.0) a.grad[i] += g[i];
        break;
      }
      case Op::LogSoftmax: {
        Node& a = nodes_[static_cast<size_t>(n.in[0])];
        if (!a.requires_grad) break;
        ensure_grad(a);
        const int m = n.shape[0], d = n.shape[1];
        for (int i = 0; i < m; ++i) {
          const double* grow = g.data() + static_cast<size_t>(i) * d;
          double s = 0.0;
          for (int j = 0; j < d; ++j) s += grow[j];
          for (int j = 0; j < d; ++j)
            a.grad[static_cast<size_t>(i) * d + j] +=
                grow[j] - std::exp(n.value[static_cast<size_t>(i) * d + j]) * s;
        }
        break;
      }
      case Op::Square: {
        Node& a = nodes_[static_cast<size_t>(n.in[0])];
        if (!a.requires_grad) break;
        ensure_grad(a);
        for (size_t i = 0; i < g.size(); ++i)
          a.grad[i] += 2.0 * a.value[i] * g[i];
        break;
      }
      case Op::ReduceSum: {
        if (auto* ga = grad_into(n.in[0]))
          for (auto& x : *ga) x += g[0];
        break;
      }
      case Op::ReduceMean: {
        Node& a = nodes_[static_cast<size_t>(n.in[0])];
        if (!a.requires_grad) break;
        ensure_grad(a);
        const double gv = g[0] / static_cast<double>(a.value.size());
        for (auto& x : a.grad) x += gv;
        break;
      }
      case Op::ConcatCols: {
        Node& a = nodes_[static_cast<size_t>(n.in[0])];
        Node& b = nodes_[static_cast<size_t>(n.in[1])];
        const int m = n.shape[0], ca = a.shape[1], cb = b.shape[1];
        if (a.requires_grad) {
          ensure_grad(a);
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < ca; ++j)
              a.grad[static_cast<size_t>(i) * ca + j] +=
                  g[static_cast<size_t>(i) * (ca + cb) + j];
        }
        if (b.requires_grad) {
          ensure_grad(b);
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < cb; ++j)
              b.grad[static_cast<size_t>(i) * cb + j] +=
                  g[static_cast<size_t>(i) * (ca + cb) + ca + j];
        }
        break;
      }
      case Op::SliceCols: {
        Node& a = nodes_[static_cast<size_t>(n.in[0])];
        if (!a.requires_grad) break;
        ensure_grad(a);
        const int m = n.shape[0], w = n.shape[1], c = a.shape[1];
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < w; ++j)
            a.grad[static_cast<size_t>(i) * c + n.i0 + j] +=
                g[static_cast<size_t>(i) * w + j];
        break;
      }
      case Op::Dropout: {
        Node& x = nodes_[static_cast<size_t>(n.in[0])];
        Node& m = nodes_[static_cast<size_t>(n.in[1])];
        if (!x.requires_grad) break;
        ensure_grad(x);
        for (size_t i = 0; i < g.size(); ++i)
          x.grad[i] += g[i] * m.value[i] * n.attr;
        break;
      }
      case Op::Reparam: {
        Node& mu = nodes_[static_cast<size_t>(n.in[0])];
        Node& lv = nodes_[static_cast<size_t>(n.in[1])];
        Node& eps = nodes_[static_cast<size_t>(n.in[2])];
        if (mu.requires_grad) {
          ensure_grad(mu);
          for (size_t i = 0; i < g.size(); ++i) mu.grad[i] += g[i];
        }
        if (lv.requires_grad) {
          ensure_grad(lv);
          for (size_t i = 0; i < g.size(); ++i)
            lv.grad[i] +=
                g[i] * 0.5 * std::exp(0.5 * lv.value[i]) * eps.value[i];
        }
        break;
      }
      case Op::Leaf:
        break;
    }
  }

  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> named_;
  bool check_finite_;
};

inline const Shape& Tensor::shape() const { return graph_->shape_of(*this); }
inline size_t Tensor::size() const { return numel(shape()); }
inline const std::vector<double>& Tensor::values() const {
  return graph_->values_of(*this);
}
inline bool Tensor::requires_grad() const {
  return graph_->requires_grad_of(*this);
}
inline const std::vector<double>& Tensor::grad() const {
  return graph_->grad_of(*this);
}
inline bool Tensor::has_grad() const { return graph_->has_grad(*this); }
inline double Tensor::item() const {
  const auto& v = values();
  if (v.size() != 1)
    throw ShapeError("item: tensor is not scalar, shape " +
                     shape_str(shape()));
  return v[0];
}

}  // namespace fvae
