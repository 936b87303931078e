#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fvae/backbones.hpp"
#include "fvae/dataset.hpp"
#include "fvae/trainer.hpp"

namespace fvae {

using nlohmann::json;

namespace cfg_detail {

inline void check_keys(const json& obj, const std::string& section,
                       const std::set<std::string>& allowed) {
  if (!obj.is_object())
    throw ConfigError("config: section '" + section + "' must be an object");
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key))
      throw ConfigError("config: unknown key '" + section + "." + key + "'");
}

template <typename T>
void read_field(const json& obj, const std::string& section, const char* key,
                T& out) {
  if (!obj.contains(key)) return;
  try {
    obj.at(key).get_to(out);
  } catch (const json::exception&) {
    throw ConfigError("config: bad value for '" + section + "." + key + "'");
  }
}

}  // namespace cfg_detail

// Full experiment document: dataset + model + adapter + objective + train +
// output_dir. Every field is validated before any work starts; unknown keys
// are rejected.
struct ExperimentConfig {
  DatasetSpec dataset;
  BackboneSpec model;
  AdapterConfig adapter;
  double alpha = 1.0;
  double beta = 1.0;
  double delta = 1.0;
  std::vector<double> lambda;  // one entry, or one per adapted layer
  TrainConfig train;
  std::string output_dir = "runs/out";

  ExperimentConfig() {
    model.kind = BackboneSpec::Kind::Mlp;
    model.mlp.hidden_dim = 64;
    model.mlp.adapted_layers = {0, 1};
    lambda = {1e-3};
    finalize();
  }

  // Resolves derived fields (model input/class dims, per-layer lambda,
  // trainer variant and coefficients) and validates everything.
  void finalize() {
    dataset.validate();
    if (model.kind == BackboneSpec::Kind::Mlp) {
      model.mlp.input_dim = dataset.feature_dim();
      model.mlp.num_classes = dataset.num_classes;
    } else {
      model.attention.num_classes = dataset.num_classes;
      if (model.attention.tokens * model.attention.d_model !=
          dataset.feature_dim())
        throw ConfigError(
            "config: model.tokens * model.d_model must equal the dataset "
            "feature dimension " +
            std::to_string(dataset.feature_dim()));
    }
    model.validate();
    adapter.validate();
    const int layers = model.adapted_layer_count();
    ObjectiveCoeffs coeffs;
    coeffs.alpha = alpha;
    coeffs.beta = beta;
    coeffs.delta = delta;
    if (lambda.size() == 1)
      coeffs.lambda_per_layer.assign(static_cast<size_t>(layers), lambda[0]);
    else
      coeffs.lambda_per_layer = lambda;
    train.variant = adapter.variant;
    train.coeffs = coeffs;
    train.validate(layers);
    if (output_dir.empty()) throw ConfigError("config: output_dir is empty");
  }

  static ExperimentConfig from_json(const json& doc) {
    cfg_detail::check_keys(doc, "(root)",
                           {"dataset", "model", "adapter", "objective", "train",
                            "output_dir"});
    ExperimentConfig c;
    using cfg_detail::check_keys;
    using cfg_detail::read_field;

    if (doc.contains("dataset")) {
      const json& d = doc.at("dataset");
      check_keys(d, "dataset",
                 {"num_classes", "core_dim", "spurious_dim", "noise_dim",
                  "rho_train", "rho_test", "n_train", "n_test",
                  "core_separation", "spurious_separation", "noise_sigma",
                  "seed"});
      read_field(d, "dataset", "num_classes", c.dataset.num_classes);
      read_field(d, "dataset", "core_dim", c.dataset.core_dim);
      read_field(d, "dataset", "spurious_dim", c.dataset.spurious_dim);
      read_field(d, "dataset", "noise_dim", c.dataset.noise_dim);
      read_field(d, "dataset", "rho_train", c.dataset.rho_train);
      read_field(d, "dataset", "rho_test", c.dataset.rho_test);
      read_field(d, "dataset", "n_train", c.dataset.n_train);
      read_field(d, "dataset", "n_test", c.dataset.n_test);
      read_field(d, "dataset", "core_separation", c.dataset.core_separation);
      read_field(d, "dataset", "spurious_separation",
                 c.dataset.spurious_separation);
      read_field(d, "dataset", "noise_sigma", c.dataset.noise_sigma);
      read_field(d, "dataset", "seed", c.dataset.seed);
    }

    if (doc.contains("model")) {
      const json& m = doc.at("model");
      check_keys(m, "model",
                 {"backbone", "hidden_dim", "adapted_layers", "tokens",
                  "d_model", "ff_hidden"});
      std::string backbone = "mlp";
      read_field(m, "model", "backbone", backbone);
      if (backbone == "mlp") {
        c.model.kind = BackboneSpec::Kind::Mlp;
        read_field(m, "model", "hidden_dim", c.model.mlp.hidden_dim);
        read_field(m, "model", "adapted_layers", c.model.mlp.adapted_layers);
      } else if (backbone == "attention") {
        c.model.kind = BackboneSpec::Kind::Attention;
        read_field(m, "model", "tokens", c.model.attention.tokens);
        read_field(m, "model", "d_model", c.model.attention.d_model);
        read_field(m, "model", "ff_hidden", c.model.attention.ff_hidden);
      } else {
        throw ConfigError("config: model.backbone must be mlp or attention");
      }
    }

    if (doc.contains("adapter")) {
      const json& a = doc.at("adapter");
      check_keys(a, "adapter",
                 {"rank_r", "z2_dim", "decoder_hidden", "dropout_p",
                  "prior2_center", "lora_scale", "variant",
                  "sample_at_inference"});
      read_field(a, "adapter", "rank_r", c.adapter.rank_r);
      read_field(a, "adapter", "z2_dim", c.adapter.z2_dim);
      read_field(a, "adapter", "decoder_hidden", c.adapter.decoder_hidden);
      read_field(a, "adapter", "dropout_p", c.adapter.dropout_p);
      read_field(a, "adapter", "prior2_center", c.adapter.prior2_center);
      read_field(a, "adapter", "lora_scale", c.adapter.lora_scale);
      read_field(a, "adapter", "sample_at_inference",
                 c.adapter.sample_at_inference);
      if (a.contains("variant")) {
        std::string v;
        read_field(a, "adapter", "variant", v);
        c.adapter.variant = adapter_variant_from(v);
      }
    }

    if (doc.contains("objective")) {
      const json& o = doc.at("objective");
      check_keys(o, "objective", {"alpha", "beta", "delta", "lambda"});
      read_field(o, "objective", "alpha", c.alpha);
      read_field(o, "objective", "beta", c.beta);
      read_field(o, "objective", "delta", c.delta);
      if (o.contains("lambda")) {
        if (o.at("lambda").is_array())
          cfg_detail::read_field(o, "objective", "lambda", c.lambda);
        else {
          double v = 0;
          read_field(o, "objective", "lambda", v);
          c.lambda = {v};
        }
      }
    }

    if (doc.contains("train")) {
      const json& t = doc.at("train");
      check_keys(t, "train",
                 {"lr", "weight_decay", "warmup_fraction", "epochs",
                  "batch_size", "seed", "eval_every", "nonfinite_policy",
                  "divergence_threshold"});
      read_field(t, "train", "lr", c.train.lr);
      read_field(t, "train", "weight_decay", c.train.weight_decay);
      read_field(t, "train", "warmup_fraction", c.train.warmup_fraction);
      read_field(t, "train", "epochs", c.train.epochs);
      read_field(t, "train", "batch_size", c.train.batch_size);
      read_field(t, "train", "seed", c.train.seed);
      read_field(t, "train", "eval_every", c.train.eval_every);
      read_field(t, "train", "divergence_threshold",
                 c.train.divergence_threshold);
      if (t.contains("nonfinite_policy")) {
        std::string p;
        read_field(t, "train", "nonfinite_policy", p);
        if (p == "abort")
          c.train.nonfinite_policy = NonFinitePolicy::Abort;
        else if (p == "skip")
          c.train.nonfinite_policy = NonFinitePolicy::SkipStep;
        else
          throw ConfigError("config: train.nonfinite_policy must be abort or skip");
      }
    }

    if (doc.contains("output_dir")) {
      cfg_detail::read_field(doc, "(root)", "output_dir", c.output_dir);
    }
    c.finalize();
    return c;
  }

  static ExperimentConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    json doc;
    try {
      in >> doc;
    } catch (const json::exception& e) {
      throw ConfigError("config: '" + path + "' is not valid JSON: " + e.what());
    }
    return from_json(doc);
  }

  json to_json() const {
    json doc;
    doc["dataset"] = {{"num_classes", dataset.num_classes},
                      {"core_dim", dataset.core_dim},
                      {"spurious_dim", dataset.spurious_dim},
                      {"noise_dim", dataset.noise_dim},
                      {"rho_train", dataset.rho_train},
                      {"rho_test", dataset.rho_test},
                      {"n_train", dataset.n_train},
                      {"n_test", dataset.n_test},
                      {"core_separation", dataset.core_separation},
                      {"spurious_separation", dataset.spurious_separation},
                      {"noise_sigma", dataset.noise_sigma},
                      {"seed", dataset.seed}};
    if (model.kind == BackboneSpec::Kind::Mlp)
      doc["model"] = {{"backbone", "mlp"},
                      {"hidden_dim", model.mlp.hidden_dim},
                      {"adapted_layers", model.mlp.adapted_layers}};
    else
      doc["model"] = {{"backbone", "attention"},
                      {"tokens", model.attention.tokens},
                      {"d_model", model.attention.d_model},
                      {"ff_hidden", model.attention.ff_hidden}};
    doc["adapter"] = {{"rank_r", adapter.rank_r},
                      {"z2_dim", adapter.z2_dim},
                      {"decoder_hidden", adapter.decoder_hidden},
                      {"dropout_p", adapter.dropout_p},
                      {"prior2_center", adapter.prior2_center},
                      {"lora_scale", adapter.lora_scale},
                      {"variant", to_string(adapter.variant)},
                      {"sample_at_inference", adapter.sample_at_inference}};
    doc["objective"] = {{"alpha", alpha},
                        {"beta", beta},
                        {"delta", delta},
                        {"lambda", lambda}};
    doc["train"] = {
        {"lr", train.lr},
        {"weight_decay", train.weight_decay},
        {"warmup_fraction", train.warmup_fraction},
        {"epochs", train.epochs},
        {"batch_size", train.batch_size},
        {"seed", train.seed},
        {"eval_every", train.eval_every},
        {"nonfinite_policy",
         train.nonfinite_policy == NonFinitePolicy::Abort ? "abort" : "skip"},
        {"divergence_threshold", train.divergence_threshold}};
    doc["output_dir"] = output_dir;
    return doc;
  }
};

}  // namespace fvae
