#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fvae/error.hpp"
#include "fvae/nn.hpp"
#include "fvae/rng.hpp"
#include "fvae/tensor.hpp"

namespace fvae {

enum class AdapterVariant { Lora, Fvae, Vae2lat, BetaVae2lat };

inline const char* to_string(AdapterVariant v) {
  switch (v) {
    case AdapterVariant::Lora: return "lora";
    case AdapterVariant::Fvae: return "fvae";
    case AdapterVariant::Vae2lat: return "vae2lat";
    case AdapterVariant::BetaVae2lat: return "beta_vae2lat";
  }
  return "?";
}

inline AdapterVariant adapter_variant_from(const std::string& s) {
  if (s == "lora") return AdapterVariant::Lora;
  if (s == "fvae") return AdapterVariant::Fvae;
  if (s == "vae2lat") return AdapterVariant::Vae2lat;
  if (s == "beta_vae2lat") return AdapterVariant::BetaVae2lat;
  throw ConfigError("unknown adapter variant '" + s +
                    "' (expected lora|fvae|vae2lat|beta_vae2lat)");
}

// True for the three variants that share the two-encoder adapter structure
// and differ only in the training objective.
inline bool is_vae_family(AdapterVariant v) {
  return v != AdapterVariant::Lora;
}

struct AdapterConfig {
  int rank_r = 16;          // dimension of z1 == LoRA rank
  int z2_dim = 16;          // dimension of z2
  int decoder_hidden = 128;
  double dropout_p = 0.1;
  double prior2_center = 1.5;
  double lora_scale = 1.0;
  AdapterVariant variant = AdapterVariant::Fvae;
  bool sample_at_inference = false;  // experimentation flag; mean by default

  void validate() const {
    if (rank_r < 1)
      throw ConfigError("adapter.rank_r must be >= 1, got " +
                        std::to_string(rank_r));
    if (z2_dim < 1)
      throw ConfigError("adapter.z2_dim must be >= 1, got " +
                        std::to_string(z2_dim));
    if (decoder_hidden < 1)
      throw ConfigError("adapter.decoder_hidden must be >= 1, got " +
                        std::to_string(decoder_hidden));
    if (!(dropout_p >= 0.0 && dropout_p < 1.0))
      throw ConfigError("adapter.dropout_p must be in [0,1), got " +
                        std::to_string(dropout_p));
    if (!std::isfinite(prior2_center))
      throw ConfigError("adapter.prior2_center must be finite");
    if (!std::isfinite(lora_scale))
      throw ConfigError("adapter.lora_scale must be finite");
  }
};

enum class RunMode { Train, Infer };

// Variational posteriors and reconstruction produced by one training-mode
// pass of an FVAE adapter. All tensors are rows-in-batch x dimension.
struct FvaeIntermediates {
  Tensor x;        // reconstruction target (the layer input)
  Tensor mu1, log_var1;
  Tensor mu2, log_var2;
  Tensor z1, z2;
  Tensor x_hat;
  int rows = 0;
};

namespace detail {

inline Tensor dropout_branch(Graph& g, Tensor x, double p, Pcg64* rng) {
  if (p <= 0.0 || rng == nullptr) return x;
  const auto& shape = x.shape();
  std::vector<double> mask(x.size());
  for (auto& m : mask) m = rng->next_double() < p ? 0.0 : 1.0;
  return g.dropout(x, g.constant(shape, std::move(mask)), p);
}

}  // namespace detail

// Frozen linear layer plus the standard low-rank branch:
//   y = W x + bias + scale * B(A x), B zero-initialized.
class LoraAdapter {
 public:
  static LoraAdapter create(ParamStore& store, const std::string& prefix,
                            int d_in, int d_out, const AdapterConfig& cfg,
                            Pcg64& init_rng) {
    cfg.validate();
    LoraAdapter a;
    a.prefix_ = prefix;
    a.d_in_ = d_in;
    a.d_out_ = d_out;
    a.cfg_ = cfg;
    a.base_ = Linear::create(store, prefix + ".base", d_in, d_out,
                             /*trainable=*/false, /*with_bias=*/true, init_rng);
    Param& A = store.add(prefix + ".lora.A", {cfg.rank_r, d_in}, true);
    init_uniform_fan_in(A, d_in, init_rng);
    store.add(prefix + ".lora.B", {d_out, cfg.rank_r}, true);  // zero init
    return a;
  }

  Tensor forward(Graph& g, const ParamStore& store, Tensor x, RunMode mode,
                 Pcg64* dropout_rng) const {
    check_input(g, x);
    Tensor y = base_.forward(g, store, x);
    Tensor branch_in =
        mode == RunMode::Train
            ? detail::dropout_branch(g, x, cfg_.dropout_p, dropout_rng)
            : x;
    Tensor A = use_param(g, store.at(prefix_ + ".lora.A"));
    Tensor B = use_param(g, store.at(prefix_ + ".lora.B"));
    Tensor low = g.matmul(g.matmul(branch_in, g.transpose(A)), g.transpose(B));
    return g.add(y, g.scale(low, cfg_.lora_scale));
  }

  int d_in() const { return d_in_; }
  int d_out() const { return d_out_; }
  const std::string& prefix() const { return prefix_; }

 private:
  void check_input(Graph& g, Tensor x) const {
    const Shape& s = g.shape_of(x);
    if (s.size() != 2 || s[1] != d_in_)
      throw ShapeError("lora_forward: input " + shape_str(s) +
                       " does not end in d_in=" + std::to_string(d_in_));
  }

  std::string prefix_;
  int d_in_ = 0, d_out_ = 0;
  AdapterConfig cfg_;
  Linear base_;
};

// Frozen linear layer whose low-rank projection is fed by the task-salient
// encoder of a two-latent VAE:
//   train: y = W x + bias + B z1,  z1 ~ q1(x), plus (q2, z2, x_hat) for the
//          objective;
//   infer: y = W x + bias + B mu1(x); the second encoder and the decoder are
//          never evaluated.
class FvaeAdapter {
 public:
  static FvaeAdapter create(ParamStore& store, const std::string& prefix,
                            int d_in, int d_out, const AdapterConfig& cfg,
                            Pcg64& init_rng) {
    cfg.validate();
    FvaeAdapter a;
    a.prefix_ = prefix;
    a.d_in_ = d_in;
    a.d_out_ = d_out;
    a.cfg_ = cfg;
    a.base_ = Linear::create(store, prefix + ".base", d_in, d_out, false, true,
                             init_rng);
    // Encoders: x -> dim(z_i) -> relu -> 2*dim(z_i), split into (mu, log var).
    a.enc1_h_ = Linear::create(store, prefix + ".enc1.h", d_in, cfg.rank_r,
                               true, true, init_rng);
    a.enc1_out_ = Linear::create(store, prefix + ".enc1.out", cfg.rank_r,
                                 2 * cfg.rank_r, true, true, init_rng);
    a.enc2_h_ = Linear::create(store, prefix + ".enc2.h", d_in, cfg.z2_dim,
                               true, true, init_rng);
    a.enc2_out_ = Linear::create(store, prefix + ".enc2.out", cfg.z2_dim,
                                 2 * cfg.z2_dim, true, true, init_rng);
    // Decoder: concat(z1,z2) -> H_D -> relu -> d_in.
    a.dec_h_ = Linear::create(store, prefix + ".dec.h",
                              cfg.rank_r + cfg.z2_dim, cfg.decoder_hidden,
                              true, true, init_rng);
    a.dec_out_ = Linear::create(store, prefix + ".dec.out", cfg.decoder_hidden,
                                d_in, true, true, init_rng);
    // Projection B carries no bias and starts at zero so the adapted layer
    // is exactly the frozen layer at step 0.
    store.add(prefix + ".B", {d_out, cfg.rank_r}, true);
    return a;
  }

  std::pair<Tensor, FvaeIntermediates> forward_train(Graph& g,
                                                     const ParamStore& store,
                                                     Tensor x, Pcg64* dropout_rng,
                                                     Pcg64& eps1_rng,
                                                     Pcg64& eps2_rng) const {
    check_input(g, x);
    const int rows = g.shape_of(x)[0];
    Tensor branch_in = detail::dropout_branch(g, x, cfg_.dropout_p, dropout_rng);
    return train_core(
        g, store, x, branch_in,
        normal_vector(static_cast<size_t>(rows) * cfg_.rank_r, eps1_rng),
        normal_vector(static_cast<size_t>(rows) * cfg_.z2_dim, eps2_rng));
  }

  // Training-mode pass with caller-supplied noise and no dropout; used to
  // pin the reparameterization samples in identity checks.
  std::pair<Tensor, FvaeIntermediates> forward_train_with(
      Graph& g, const ParamStore& store, Tensor x, std::vector<double> eps1,
      std::vector<double> eps2) const {
    check_input(g, x);
    return train_core(g, store, x, x, std::move(eps1), std::move(eps2));
  }

  // Deterministic inference path; enc2 and the decoder are not evaluated.
  Tensor forward_infer(Graph& g, const ParamStore& store, Tensor x,
                       Pcg64* sample_rng = nullptr) const {
    check_input(g, x);
    Tensor y_base = base_.forward(g, store, x);
    auto [mu1, lv1] = encode(g, store, x, enc1_h_, enc1_out_, cfg_.rank_r);
    Tensor z1 = mu1;
    if (cfg_.sample_at_inference && sample_rng != nullptr) {
      const int rows = g.shape_of(x)[0];
      Tensor eps = g.constant(
          {rows, cfg_.rank_r},
          normal_vector(static_cast<size_t>(rows) * cfg_.rank_r, *sample_rng));
      z1 = g.reparameterize(mu1, lv1, eps);
    }
    Tensor B = use_param(g, store.at(prefix_ + ".B"));
    return g.add(y_base, g.matmul(z1, g.transpose(B)));
  }

  int d_in() const { return d_in_; }
  int d_out() const { return d_out_; }
  const std::string& prefix() const { return prefix_; }
  const AdapterConfig& config() const { return cfg_; }

 private:
  void check_input(Graph& g, Tensor x) const {
    const Shape& s = g.shape_of(x);
    if (s.size() != 2 || s[1] != d_in_)
      throw ShapeError("fvae_forward: input " + shape_str(s) +
                       " does not end in d_in=" + std::to_string(d_in_));
  }

  std::pair<Tensor, FvaeIntermediates> train_core(
      Graph& g, const ParamStore& store, Tensor x, Tensor branch_in,
      std::vector<double> eps1_data, std::vector<double> eps2_data) const {
    const int rows = g.shape_of(x)[0];
    Tensor y_base = base_.forward(g, store, x);

    auto [mu1, lv1] = encode(g, store, branch_in, enc1_h_, enc1_out_, cfg_.rank_r);
    auto [mu2, lv2] = encode(g, store, branch_in, enc2_h_, enc2_out_, cfg_.z2_dim);

    Tensor eps1 = g.constant({rows, cfg_.rank_r}, std::move(eps1_data));
    Tensor eps2 = g.constant({rows, cfg_.z2_dim}, std::move(eps2_data));
    Tensor z1 = g.reparameterize(mu1, lv1, eps1);
    Tensor z2 = g.reparameterize(mu2, lv2, eps2);

    Tensor h = g.relu(dec_h_.forward(g, store, g.concat_cols(z1, z2)));
    Tensor x_hat = dec_out_.forward(g, store, h);

    Tensor B = use_param(g, store.at(prefix_ + ".B"));
    Tensor y = g.add(y_base, g.matmul(z1, g.transpose(B)));

    FvaeIntermediates inter;
    inter.x = x;
    inter.mu1 = mu1;
    inter.log_var1 = lv1;
    inter.mu2 = mu2;
    inter.log_var2 = lv2;
    inter.z1 = z1;
    inter.z2 = z2;
    inter.x_hat = x_hat;
    inter.rows = rows;
    return {y, inter};
  }

  std::pair<Tensor, Tensor> encode(Graph& g, const ParamStore& store, Tensor x,
                                   const Linear& hidden, const Linear& out,
                                   int z_dim) const {
    Tensor h = g.relu(hidden.forward(g, store, x));
    Tensor packed = out.forward(g, store, h);
    Tensor mu = g.slice_cols(packed, 0, z_dim);
    Tensor lv = g.slice_cols(packed, z_dim, 2 * z_dim);
    return {mu, lv};
  }

  std::string prefix_;
  int d_in_ = 0, d_out_ = 0;
  AdapterConfig cfg_;
  Linear base_, enc1_h_, enc1_out_, enc2_h_, enc2_out_, dec_h_, dec_out_;
};

}  // namespace fvae
