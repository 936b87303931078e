#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "fvae/backbones.hpp"
#include "fvae/objectives.hpp"

using namespace fvae;

namespace {

AdapterConfig small_cfg(AdapterVariant v, double dropout = 0.0) {
  AdapterConfig cfg;
  cfg.rank_r = 2;
  cfg.z2_dim = 2;
  cfg.decoder_hidden = 4;
  cfg.dropout_p = dropout;
  cfg.variant = v;
  return cfg;
}

BackboneSpec mlp_spec(int in = 6, int hidden = 5, int classes = 3,
                      std::vector<int> adapted = {0, 1}) {
  BackboneSpec s;
  s.kind = BackboneSpec::Kind::Mlp;
  s.mlp = {in, hidden, classes, std::move(adapted)};
  return s;
}

BackboneSpec attn_spec(int tokens = 3, int d_model = 4, int ff = 6,
                       int classes = 2) {
  BackboneSpec s;
  s.kind = BackboneSpec::Kind::Attention;
  s.attention = {tokens, d_model, ff, classes};
  return s;
}

Matrix random_matrix(int rows, int cols, Pcg64& rng) {
  Matrix m(rows, cols);
  for (auto& v : m.data) v = rng.next_uniform(-1.5, 1.5);
  return m;
}

}  // namespace

TEST_CASE("lora with zero B reproduces the frozen layer exactly") {
  ParamStore store;
  Pcg64 rng(3, 1);
  LoraAdapter a = LoraAdapter::create(store, "l", 4, 3, small_cfg(AdapterVariant::Lora), rng);

  Graph g;
  Tensor x = g.constant({2, 4}, {0.5, -1, 2, 0.25, 1, 1, -1, 0});
  Tensor y = a.forward(g, store, x, RunMode::Infer, nullptr);

  Graph g2;
  Tensor x2 = g2.constant({2, 4}, {0.5, -1, 2, 0.25, 1, 1, -1, 0});
  Tensor base = g2.bias_add(
      g2.matmul(x2, g2.transpose(g2.constant({3, 4}, store.at("l.base.weight").value))),
      g2.constant({4 - 1}, store.at("l.base.bias").value));
  CHECK(y.values() == base.values());
}

TEST_CASE("lora hand-computed example") {
  ParamStore store;
  Pcg64 rng(3, 1);
  AdapterConfig cfg = small_cfg(AdapterVariant::Lora);
  cfg.rank_r = 1;
  LoraAdapter a = LoraAdapter::create(store, "l", 2, 2, cfg, rng);
  store.at("l.base.weight").value = {1, 0, 0, 1};
  store.at("l.base.bias").value = {0, 0};
  store.at("l.lora.A").value = {1, 0};
  store.at("l.lora.B").value = {1, 0};

  Graph g;
  Tensor y = a.forward(g, store, g.constant({1, 2}, {2, 3}), RunMode::Infer,
                       nullptr);
  CHECK(y.values() == std::vector<double>{4, 3});
}

TEST_CASE("lora infer equals merged-matrix oracle to 1e-12") {
  ParamStore store;
  Pcg64 rng(17, 2);
  AdapterConfig cfg = small_cfg(AdapterVariant::Lora);
  cfg.lora_scale = 0.75;
  LoraAdapter a = LoraAdapter::create(store, "l", 5, 4, cfg, rng);
  for (auto& v : store.at("l.lora.B").value) v = rng.next_uniform(-1, 1);

  Matrix x = random_matrix(3, 5, rng);
  Graph g;
  Tensor y = a.forward(g, store, g.constant({3, 5}, x.data), RunMode::Infer,
                       nullptr);

  // Oracle: y = x (W + scale * B A)^T + bias, merged explicitly.
  const auto& W = store.at("l.base.weight").value;
  const auto& bias = store.at("l.base.bias").value;
  const auto& A = store.at("l.lora.A").value;
  const auto& B = store.at("l.lora.B").value;
  for (int i = 0; i < 3; ++i)
    for (int o = 0; o < 4; ++o) {
      double merged = bias[o];
      for (int j = 0; j < 5; ++j) {
        double w = W[static_cast<size_t>(o) * 5 + j];
        for (int r = 0; r < cfg.rank_r; ++r)
          w += cfg.lora_scale * B[static_cast<size_t>(o) * cfg.rank_r + r] *
               A[static_cast<size_t>(r) * 5 + j];
        merged += w * x.at(i, j);
      }
      CHECK(y.values()[static_cast<size_t>(i) * 4 + o] ==
            doctest::Approx(merged).epsilon(1e-12));
    }
}

TEST_CASE("fvae adapter: zero B means frozen output; eps=0 matches infer") {
  ParamStore store;
  Pcg64 rng(23, 4);
  FvaeAdapter a =
      FvaeAdapter::create(store, "f", 4, 3, small_cfg(AdapterVariant::Fvae), rng);

  Matrix x = random_matrix(2, 4, rng);

  Graph g;
  auto [y, inter] = a.forward_train_with(
      g, store, g.constant({2, 4}, x.data), std::vector<double>(4, 0.0),
      std::vector<double>(4, 0.0));
  CHECK(inter.z1.values() == inter.mu1.values());

  Graph gi;
  Tensor yi = a.forward_infer(gi, store, gi.constant({2, 4}, x.data));
  CHECK(y.values() == yi.values());

  // B starts at zero, so both equal the frozen layer output.
  Graph gb;
  Tensor base = gb.bias_add(
      gb.matmul(gb.constant({2, 4}, x.data),
                gb.transpose(gb.constant({3, 4}, store.at("f.base.weight").value))),
      gb.constant({3}, store.at("f.base.bias").value));
  CHECK(yi.values() == base.values());

  CHECK(g.shape_of(inter.x_hat) == Shape{2, 4});
  CHECK(g.shape_of(inter.mu1) == Shape{2, 2});
  CHECK(g.shape_of(inter.mu2) == Shape{2, 2});
}

TEST_CASE("inference path never touches enc2 or decoder parameters") {
  ParamStore store;
  Pcg64 rng(29, 5);
  FvaeAdapter a =
      FvaeAdapter::create(store, "f", 4, 4, small_cfg(AdapterVariant::Fvae), rng);
  Graph g;
  a.forward_infer(g, store, g.constant({1, 4}, {1, 2, 3, 4}));
  for (const auto& name : g.leaf_names()) {
    CHECK(name.find(".enc2.") == std::string::npos);
    CHECK(name.find(".dec.") == std::string::npos);
  }
  // The training path does touch them.
  Graph gt;
  Pcg64 e1(1, 1), e2(1, 2);
  a.forward_train(gt, store, gt.constant({1, 4}, {1, 2, 3, 4}), nullptr, e1, e2);
  std::set<std::string> names;
  for (const auto& n : gt.leaf_names()) names.insert(n);
  CHECK(names.count("f.enc2.h.weight") == 1);
  CHECK(names.count("f.dec.out.weight") == 1);
}

TEST_CASE("fvae infer is deterministic and pure") {
  ParamStore store;
  Pcg64 rng(31, 6);
  FvaeAdapter a =
      FvaeAdapter::create(store, "f", 6, 6, small_cfg(AdapterVariant::Fvae), rng);
  Matrix x = random_matrix(3, 6, rng);
  auto run = [&] {
    Graph g;
    return a.forward_infer(g, store, g.constant({3, 6}, x.data)).values();
  };
  CHECK(run() == run());
}

TEST_CASE("gradients through enc1 weights match finite differences") {
  ParamStore store;
  Pcg64 rng(37, 7);
  FvaeAdapter a =
      FvaeAdapter::create(store, "f", 4, 3, small_cfg(AdapterVariant::Fvae), rng);
  // Move B off zero so the downstream path carries gradient.
  for (auto& v : store.at("f.B").value) v = rng.next_uniform(-0.5, 0.5);

  Matrix x = random_matrix(2, 4, rng);
  std::vector<double> eps1 = normal_vector(4, rng);
  std::vector<double> eps2 = normal_vector(4, rng);

  auto loss_value = [&] {
    Graph g;
    auto [y, inter] = a.forward_train_with(g, store, g.constant({2, 4}, x.data),
                                           eps1, eps2);
    return g.reduce_mean(g.square(y)).item();
  };

  Graph g;
  auto [y, inter] =
      a.forward_train_with(g, store, g.constant({2, 4}, x.data), eps1, eps2);
  g.backward(g.reduce_mean(g.square(y)));

  for (const char* pname : {"f.enc1.h.weight", "f.enc1.out.weight",
                            "f.enc1.h.bias"}) {
    const auto* analytic = g.grad_by_name(pname);
    REQUIRE(analytic != nullptr);
    auto& value = store.at(pname).value;
    for (size_t j = 0; j < value.size(); ++j) {
      const double orig = value[j];
      const double h = 1e-5;
      value[j] = orig + h;
      const double fp = loss_value();
      value[j] = orig - h;
      const double fm = loss_value();
      value[j] = orig;
      const double numeric = (fp - fm) / (2 * h);
      const double denom =
          std::max({1.0, std::fabs(numeric), std::fabs((*analytic)[j])});
      CHECK(std::fabs((*analytic)[j] - numeric) / denom < 1e-4);
    }
  }
}

TEST_CASE("parameter counting: bare adapters match the worked integers") {
  {
    ParamStore store;
    Pcg64 rng(1, 1);
    AdapterConfig cfg = small_cfg(AdapterVariant::Lora);
    LoraAdapter::create(store, "l", 8, 8, cfg, rng);
    TrainableCounts c = count_trainable_params(store);
    CHECK(c.by_category["lora_AB"] == 32);  // 2*8 + 8*2
    CHECK(c.total == 32);
  }
  {
    ParamStore store;
    Pcg64 rng(1, 1);
    AdapterConfig cfg = small_cfg(AdapterVariant::Fvae);
    FvaeAdapter::create(store, "f", 8, 8, cfg, rng);
    TrainableCounts c = count_trainable_params(store);
    CHECK(c.by_category["enc1"] == 30);  // (8*2+2) + (2*4+4)
    CHECK(c.by_category["enc2"] == 30);
    CHECK(c.by_category["dec"] == 60);   // (4*4+4) + (4*8+8)
    CHECK(c.by_category["B"] == 16);     // 8*2, no bias
    CHECK(c.total == 136);
    CHECK(c.inference_path == 46);       // enc1 + B
  }
  {
    ParamStore store;
    TrainableCounts c = count_trainable_params(store);
    CHECK(c.total == 0);
  }
}

TEST_CASE("model counts match an independent per-layer counting oracle") {
  // Oracle: explicit formulas from layer dimensions.
  auto fvae_layer = [](int d_in, int d_out, int r, int z2, int hd) {
    const size_t enc1 = static_cast<size_t>(d_in) * r + r +
                        static_cast<size_t>(r) * 2 * r + 2 * r;
    const size_t enc2 = static_cast<size_t>(d_in) * z2 + z2 +
                        static_cast<size_t>(z2) * 2 * z2 + 2 * z2;
    const size_t dec = static_cast<size_t>(r + z2) * hd + hd +
                       static_cast<size_t>(hd) * d_in + d_in;
    const size_t B = static_cast<size_t>(d_out) * r;
    return enc1 + enc2 + dec + B;
  };
  auto lora_layer = [](int d_in, int d_out, int r) {
    return static_cast<size_t>(r) * d_in + static_cast<size_t>(d_out) * r;
  };

  for (AdapterVariant v : {AdapterVariant::Lora, AdapterVariant::Fvae,
                           AdapterVariant::Vae2lat, AdapterVariant::BetaVae2lat}) {
    AdapterConfig cfg = small_cfg(v);
    {
      BackboneSpec spec = mlp_spec(6, 5, 3);
      Model m = Model::build(spec, cfg, 11);
      TrainableCounts c = m.count_trainable();
      const size_t head = static_cast<size_t>(5) * 3 + 3;
      size_t expect = head;
      for (int d_in : {6, 5})
        expect += v == AdapterVariant::Lora
                      ? lora_layer(d_in, 5, cfg.rank_r)
                      : fvae_layer(d_in, 5, cfg.rank_r, cfg.z2_dim,
                                   cfg.decoder_hidden);
      CHECK(c.total == expect);
      CHECK(c.by_category["head"] == head);
    }
    {
      BackboneSpec spec = attn_spec(3, 4, 6, 2);
      Model m = Model::build(spec, cfg, 11);
      TrainableCounts c = m.count_trainable();
      const size_t head = static_cast<size_t>(4) * 2 + 2;
      size_t expect = head;
      for (int i = 0; i < 2; ++i)
        expect += v == AdapterVariant::Lora
                      ? lora_layer(4, 4, cfg.rank_r)
                      : fvae_layer(4, 4, cfg.rank_r, cfg.z2_dim,
                                   cfg.decoder_hidden);
      CHECK(c.total == expect);
    }
  }

  // Categories always sum to the total.
  Model m = Model::build(mlp_spec(), small_cfg(AdapterVariant::Fvae), 5);
  TrainableCounts c = m.count_trainable();
  size_t s = 0;
  for (const auto& [k, n] : c.by_category) s += n;
  CHECK(s == c.total);
}

TEST_CASE("zero adapted layers leaves only the head trainable") {
  Model m = Model::build(mlp_spec(6, 5, 3, {}), small_cfg(AdapterVariant::Fvae), 9);
  TrainableCounts c = m.count_trainable();
  CHECK(c.total == c.by_category["head"]);
  CHECK(c.total == 5u * 3 + 3);
}

TEST_CASE("attention backbone has exactly two adapted layers by construction") {
  Model m = Model::build(attn_spec(), small_cfg(AdapterVariant::Fvae), 9);
  CHECK(m.num_adapted_layers() == 2);
  int fvae_Bs = 0;
  for (const auto& p : m.params().all())
    if (param_category(p.name) == "B") ++fvae_Bs;
  CHECK(fvae_Bs == 2);
}

TEST_CASE("step-0 logits of adapted models equal the frozen model exactly") {
  Pcg64 rng(41, 8);
  Matrix x = random_matrix(6, 6, rng);
  BackboneSpec frozen = mlp_spec(6, 5, 3, {});
  Model base = Model::build(frozen, small_cfg(AdapterVariant::Fvae), 321);

  for (AdapterVariant v : {AdapterVariant::Lora, AdapterVariant::Fvae}) {
    Model m = Model::build(mlp_spec(6, 5, 3), small_cfg(v), 321);
    Graph ga, gb;
    ModelForward fa = m.forward_infer(ga, x);
    ModelForward fb = base.forward_infer(gb, x);
    CHECK(fa.logit_chunks[0].values() == fb.logit_chunks[0].values());
  }
}

TEST_CASE("frozen parameters receive no gradient through a full model loss") {
  Model m = Model::build(mlp_spec(6, 5, 3), small_cfg(AdapterVariant::Fvae, 0.1), 7);
  Pcg64 rng(2, 2);
  Matrix x = random_matrix(4, 6, rng);
  RngBundle bundle(99);
  Graph g;
  ModelForward f = m.forward_train(g, x, bundle);
  Tensor loss = softmax_cross_entropy(g, f.logit_chunks, {0, 1, 2, 0}, 3);
  LatentPriors priors = make_priors(2, 2, 1.5);
  for (auto& chunks : f.layer_inters) {
    ObjectiveCoeffs coeffs;
    auto [elbo, b] = fvae_elbo(g, chunks, coeffs, priors);
    loss = g.add(loss, g.scale(elbo, -1e-3));
  }
  g.backward(loss);
  for (const auto& p : m.params().all()) {
    if (!g.has_leaf(p.name)) continue;
    Tensor t = g.leaf_tensor(p.name);
    if (p.trainable)
      CHECK(t.has_grad());
    else
      CHECK_FALSE(t.has_grad());
  }
}

TEST_CASE("attention forward shapes and intermediates per example") {
  Model m = Model::build(attn_spec(3, 4, 6, 2), small_cfg(AdapterVariant::Fvae), 13);
  Pcg64 rng(5, 5);
  Matrix x = random_matrix(4, 12, rng);  // 4 examples, 3 tokens x 4 dims
  RngBundle bundle(1);
  Graph g;
  ModelForward f = m.forward_train(g, x, bundle);
  CHECK(f.logit_chunks.size() == 4);
  REQUIRE(f.layer_inters.size() == 2);
  CHECK(f.layer_inters[0].size() == 4);
  CHECK(f.layer_inters[0][0].rows == 3);  // per-token posteriors
  CHECK(m.predict(x).size() == 4);
}

TEST_CASE("invalid specs and configs are rejected") {
  AdapterConfig bad = small_cfg(AdapterVariant::Fvae);
  bad.rank_r = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_cfg(AdapterVariant::Fvae);
  bad.dropout_p = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  BackboneSpec s = mlp_spec(6, 5, 3, {0, 0});
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = mlp_spec(6, 5, 3, {2});
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = attn_spec(0, 4, 6, 2);
  CHECK_THROWS_AS(s.validate(), ConfigError);

  CHECK_THROWS_AS(adapter_variant_from("dora"), ConfigError);

  Model m = Model::build(mlp_spec(6, 5, 3), small_cfg(AdapterVariant::Lora), 3);
  Matrix wrong(2, 7);
  CHECK_THROWS_AS(m.predict(wrong), ShapeError);
}
