#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "fvae/adapters.hpp"
#include "fvae/matrix.hpp"
#include "fvae/nn.hpp"
#include "fvae/rng.hpp"
#include "fvae/tensor.hpp"

namespace fvae {

// (a) MLP classifier: input -> hidden -> relu -> hidden -> logits, with
// adapters on the designated hidden layers (0 and/or 1).
struct MlpSpec {
  int input_dim = 32;
  int hidden_dim = 32;
  int num_classes = 2;
  std::vector<int> adapted_layers = {0, 1};
};

// (b) single-head self-attention block over `tokens` rows of width d_model;
// adapters sit on the query and key projections only. The flat feature vector
// of each example is reshaped to (tokens x d_model).
struct AttentionSpec {
  int tokens = 4;
  int d_model = 8;
  int ff_hidden = 32;
  int num_classes = 2;
};

struct BackboneSpec {
  enum class Kind { Mlp, Attention };
  Kind kind = Kind::Mlp;
  MlpSpec mlp;
  AttentionSpec attention;

  int input_dim() const {
    return kind == Kind::Mlp ? mlp.input_dim
                             : attention.tokens * attention.d_model;
  }

  int num_classes() const {
    return kind == Kind::Mlp ? mlp.num_classes : attention.num_classes;
  }

  void validate() const {
    if (kind == Kind::Mlp) {
      if (mlp.input_dim < 1 || mlp.hidden_dim < 1 || mlp.num_classes < 1)
        throw ConfigError("model: mlp dimensions must be >= 1");
      for (int l : mlp.adapted_layers)
        if (l != 0 && l != 1)
          throw ConfigError("model.adapted_layers: mlp has layers 0 and 1, got " +
                            std::to_string(l));
      std::vector<int> s = mlp.adapted_layers;
      std::sort(s.begin(), s.end());
      if (std::adjacent_find(s.begin(), s.end()) != s.end())
        throw ConfigError("model.adapted_layers: duplicate layer index");
    } else {
      if (attention.tokens < 1 || attention.d_model < 1 ||
          attention.ff_hidden < 1 || attention.num_classes < 1)
        throw ConfigError("model: attention dimensions must be >= 1");
    }
  }

  // Number of adapter-carrying layers (query+key for attention).
  int adapted_layer_count() const {
    return kind == Kind::Mlp ? static_cast<int>(mlp.adapted_layers.size()) : 2;
  }
};

// One adaptable layer slot: a frozen linear, a LoRA adapter, or an FVAE
// adapter, depending on spec and variant.
struct LayerSlot {
  std::variant<Linear, LoraAdapter, FvaeAdapter> impl;

  bool adapted() const { return !std::holds_alternative<Linear>(impl); }
  bool is_fvae() const { return std::holds_alternative<FvaeAdapter>(impl); }
};

struct TrainableCounts {
  size_t total = 0;
  std::map<std::string, size_t> by_category;  // lora_AB, enc1, enc2, dec, B, head
  size_t inference_path = 0;
};

inline std::string param_category(const std::string& name) {
  if (name.find(".lora.") != std::string::npos) return "lora_AB";
  if (name.find(".enc1.") != std::string::npos) return "enc1";
  if (name.find(".enc2.") != std::string::npos) return "enc2";
  if (name.find(".dec.") != std::string::npos) return "dec";
  if (name.size() >= 2 && name.compare(name.size() - 2, 2, ".B") == 0)
    return "B";
  if (name.rfind("head", 0) == 0) return "head";
  return "frozen";
}

// Trainable-parameter accounting by role. inference_path counts only what the
// deterministic inference pass touches: enc1 + B (and LoRA's A/B) plus head.
inline TrainableCounts count_trainable_params(const ParamStore& store) {
  TrainableCounts c;
  for (const char* k : {"lora_AB", "enc1", "enc2", "dec", "B", "head"})
    c.by_category[k] = 0;
  for (const auto& p : store.all()) {
    if (!p.trainable) continue;
    c.total += p.size();
    c.by_category[param_category(p.name)] += p.size();
  }
  c.inference_path = c.by_category["lora_AB"] + c.by_category["enc1"] +
                     c.by_category["B"] + c.by_category["head"];
  return c;
}

// Batch forward output. MLP batches are one chunk; the attention backbone
// processes one example per chunk.
struct ModelForward {
  std::vector<Tensor> logit_chunks;
  std::vector<std::vector<FvaeIntermediates>> layer_inters;  // [layer][chunk]
  int total_rows = 0;
};

class Model {
 public:
  static Model build(const BackboneSpec& spec, const AdapterConfig& adapter,
                     uint64_t init_seed) {
    spec.validate();
    adapter.validate();
    Model m;
    m.spec_ = spec;
    m.adapter_ = adapter;

    // Every component draws from its own named init stream, so backbone
    // weights do not depend on which layers carry adapters.
    auto stream = [init_seed](const std::string& prefix) {
      return Pcg64(init_seed, fnv1a64("init." + prefix));
    };

    if (spec.kind == BackboneSpec::Kind::Mlp) {
      const auto& ms = spec.mlp;
      const int dims[3] = {ms.input_dim, ms.hidden_dim, ms.hidden_dim};
      for (int l = 0; l < 2; ++l) {
        const std::string prefix = "layer" + std::to_string(l);
        const bool adapt =
            std::find(ms.adapted_layers.begin(), ms.adapted_layers.end(), l) !=
            ms.adapted_layers.end();
        Pcg64 rng = stream(prefix);
        m.slots_.push_back(
            m.make_slot(prefix, dims[l], dims[l + 1], adapt, rng));
      }
      Pcg64 rng = stream("head");
      m.head_ = Linear::create(m.store_, "head", ms.hidden_dim, ms.num_classes,
                               true, true, rng);
    } else {
      const auto& as = spec.attention;
      const int d = as.d_model;
      {
        Pcg64 rng = stream("attn.q");
        m.slots_.push_back(m.make_slot("attn.q", d, d, true, rng));
      }
      {
        Pcg64 rng = stream("attn.k");
        m.slots_.push_back(m.make_slot("attn.k", d, d, true, rng));
      }
      Pcg64 rv = stream("attn.v");
      m.attn_v_ = Linear::create(m.store_, "attn.v", d, d, false, true, rv);
      Pcg64 ro = stream("attn.o");
      m.attn_o_ = Linear::create(m.store_, "attn.o", d, d, false, true, ro);
      Pcg64 r1 = stream("attn.ffn1");
      m.ffn1_ = Linear::create(m.store_, "attn.ffn1", d, as.ff_hidden, false,
                               true, r1);
      Pcg64 r2 = stream("attn.ffn2");
      m.ffn2_ = Linear::create(m.store_, "attn.ffn2", as.ff_hidden, d, false,
                               true, r2);
      Pcg64 rh = stream("head");
      m.head_ =
          Linear::create(m.store_, "head", d, as.num_classes, true, true, rh);
    }
    return m;
  }

  const BackboneSpec& spec() const { return spec_; }
  const AdapterConfig& adapter_config() const { return adapter_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  int num_adapted_layers() const { return spec_.adapted_layer_count(); }

  // Training-mode forward. RNG order per chunk: for each adapted layer in
  // index order, dropout mask then eps1 then eps2.
  ModelForward forward_train(Graph& g, const Matrix& x, RngBundle& rng) const {
    return forward_impl(g, x, RunMode::Train, &rng);
  }

  ModelForward forward_infer(Graph& g, const Matrix& x) const {
    return forward_impl(g, x, RunMode::Infer, nullptr);
  }

  // Deterministic inference-path predictions (argmax of logits).
  std::vector<int> predict(const Matrix& x) const {
    std::vector<int> out(static_cast<size_t>(x.rows));
    const int chunk = 256;
    const int c = spec_.num_classes();
    for (int begin = 0; begin < x.rows; begin += chunk) {
      const int end = std::min(x.rows, begin + chunk);
      Matrix part = x.row_slice(begin, end);
      Graph g;
      ModelForward f = forward_impl(g, part, RunMode::Infer, nullptr);
      int row = begin;
      for (const Tensor& t : f.logit_chunks) {
        const auto& v = t.values();
        const int rows = t.shape()[0];
        for (int i = 0; i < rows; ++i, ++row) {
          int arg = 0;
          for (int j = 1; j < c; ++j)
            if (v[static_cast<size_t>(i) * c + j] >
                v[static_cast<size_t>(i) * c + arg])
              arg = j;
          out[static_cast<size_t>(row)] = arg;
        }
      }
    }
    return out;
  }

  TrainableCounts count_trainable() const {
    return count_trainable_params(store_);
  }

 private:
  LayerSlot make_slot(const std::string& prefix, int d_in, int d_out,
                      bool adapt, Pcg64& rng) {
    LayerSlot slot;
    if (!adapt) {
      slot.impl = Linear::create(store_, prefix + ".base", d_in, d_out, false,
                                 true, rng);
    } else if (adapter_.variant == AdapterVariant::Lora) {
      slot.impl = LoraAdapter::create(store_, prefix, d_in, d_out, adapter_, rng);
    } else {
      slot.impl = FvaeAdapter::create(store_, prefix, d_in, d_out, adapter_, rng);
    }
    return slot;
  }

  Tensor slot_forward(Graph& g, const LayerSlot& slot, Tensor x, RunMode mode,
                      RngBundle* rng,
                      std::vector<FvaeIntermediates>* inters) const {
    if (const Linear* lin = std::get_if<Linear>(&slot.impl))
      return lin->forward(g, store_, x);
    if (const LoraAdapter* lora = std::get_if<LoraAdapter>(&slot.impl)) {
      Pcg64* drop = nullptr;
      if (mode == RunMode::Train && rng) drop = &rng->stream("dropout");
      return lora->forward(g, store_, x, mode, drop);
    }
    const FvaeAdapter& fv = std::get<FvaeAdapter>(slot.impl);
    if (mode == RunMode::Infer) return fv.forward_infer(g, store_, x);
    Pcg64* drop = adapter_.dropout_p > 0.0 ? &rng->stream("dropout") : nullptr;
    auto [y, inter] = fv.forward_train(g, store_, x, drop, rng->stream("eps1"),
                                       rng->stream("eps2"));
    if (inters) inters->push_back(inter);
    return y;
  }

  ModelForward forward_impl(Graph& g, const Matrix& x, RunMode mode,
                            RngBundle* rng) const {
    if (x.cols != spec_.input_dim())
      throw ShapeError("model forward: input has " + std::to_string(x.cols) +
                       " features, expected " +
                       std::to_string(spec_.input_dim()));
    ModelForward out;
    out.total_rows = x.rows;
    const bool track = mode == RunMode::Train &&
                       is_vae_family(adapter_.variant);
    if (track)
      out.layer_inters.resize(static_cast<size_t>(num_adapted_layers()));

    if (spec_.kind == BackboneSpec::Kind::Mlp) {
      Tensor h = g.constant({x.rows, x.cols}, x.data);
      int adapted_idx = 0;
      for (size_t l = 0; l < slots_.size(); ++l) {
        std::vector<FvaeIntermediates> local;
        h = slot_forward(g, slots_[l], h, mode, rng,
                         track && slots_[l].is_fvae() ? &local : nullptr);
        if (track && slots_[l].adapted()) {
          if (!local.empty())
            out.layer_inters[static_cast<size_t>(adapted_idx)].push_back(
                local[0]);
          ++adapted_idx;
        }
        if (l == 0) h = g.relu(h);
      }
      out.logit_chunks.push_back(head_.forward(g, store_, h));
    } else {
      const auto& as = spec_.attention;
      const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(as.d_model));
      Tensor pool = g.constant(
          {1, as.tokens},
          std::vector<double>(static_cast<size_t>(as.tokens),
                              1.0 / static_cast<double>(as.tokens)));
      for (int ex = 0; ex < x.rows; ++ex) {
        std::vector<double> row(
            x.data.begin() + static_cast<size_t>(ex) * x.cols,
            x.data.begin() + static_cast<size_t>(ex + 1) * x.cols);
        Tensor tokens = g.constant({as.tokens, as.d_model}, std::move(row));
        std::vector<FvaeIntermediates> q_local, k_local;
        Tensor q = slot_forward(g, slots_[0], tokens, mode, rng,
                                track ? &q_local : nullptr);
        Tensor k = slot_forward(g, slots_[1], tokens, mode, rng,
                                track ? &k_local : nullptr);
        Tensor v = attn_v_.forward(g, store_, tokens);
        Tensor scores = g.scale(g.matmul(q, g.transpose(k)), inv_sqrt_d);
        Tensor attn = g.exp(g.log_softmax(scores));
        Tensor ctx = attn_o_.forward(g, store_, g.matmul(attn, v));
        Tensor ffn = ffn2_.forward(g, store_, g.relu(ffn1_.forward(g, store_, ctx)));
        Tensor pooled = g.matmul(pool, ffn);
        out.logit_chunks.push_back(head_.forward(g, store_, pooled));
        if (track) {
          if (!q_local.empty()) out.layer_inters[0].push_back(q_local[0]);
          if (!k_local.empty()) out.layer_inters[1].push_back(k_local[0]);
        }
      }
    }
    return out;
  }

  BackboneSpec spec_;
  AdapterConfig adapter_;
  ParamStore store_;
  std::vector<LayerSlot> slots_;
  Linear head_, attn_v_, attn_o_, ffn1_, ffn2_;
};

}  // namespace fvae
