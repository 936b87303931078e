#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fvae/backbones.hpp"
#include "fvae/container.hpp"
#include "fvae/dataset.hpp"
#include "fvae/objectives.hpp"
#include "fvae/optimizer.hpp"
#include "fvae/rng.hpp"

namespace fvae {

struct TrainConfig {
  double lr = 5e-3;
  double weight_decay = 0.01;
  double warmup_fraction = 0.1;
  int epochs = 90;
  int batch_size = 128;
  uint64_t seed = 42;
  AdapterVariant variant = AdapterVariant::Fvae;
  ObjectiveCoeffs coeffs;
  int eval_every = 50;  // steps between metric rows; the final step always logs
  NonFinitePolicy nonfinite_policy = NonFinitePolicy::Abort;
  double divergence_threshold = 1e6;

  void validate(int num_adapted_layers) const {
    if (!(lr > 0.0) || !std::isfinite(lr))
      throw ConfigError("train.lr must be positive, got " + std::to_string(lr));
    if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0))
      throw ConfigError("train.warmup_fraction must lie in [0,1]");
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (eval_every < 1) throw ConfigError("train.eval_every must be >= 1");
    if (weight_decay < 0.0 || !std::isfinite(weight_decay))
      throw ConfigError("train.weight_decay must be >= 0");
    coeffs.validate(num_adapted_layers);
  }
};

struct MetricsRow {
  int64_t step = 0;
  std::string split = "eval";
  double loss_total = 0, loss_downstream = 0, recon = 0, kl1 = 0;
  double lambda = 0, delta = 0, gamma = 0, w2 = 0;
  double acc = 0, wg = 0, avg = 0, disparity = 0;
};

struct MetricsLog {
  std::vector<MetricsRow> rows;

  static const char* header() {
    return "step,split,loss_total,loss_downstream,recon,kl1,lambda,delta,"
           "gamma,w2,acc,wg,avg,disparity";
  }

  std::string to_csv() const {
    std::ostringstream out;
    out << header() << '\n';
    char buf[40];
    auto put = [&](double v) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ',' << buf;
    };
    for (const auto& r : rows) {
      out << r.step << ',' << r.split;
      for (double v : {r.loss_total, r.loss_downstream, r.recon, r.kl1,
                       r.lambda, r.delta, r.gamma, r.w2, r.acc, r.wg, r.avg,
                       r.disparity})
        put(v);
      out << '\n';
    }
    return out.str();
  }

  void write(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for write");
    f << to_csv();
    if (!f) throw IoError("short write to '" + path + "'");
  }
};

// Per-step, per-layer repulsion trajectory (the gamma-probe signal).
struct ProbeRow {
  int64_t step = 0;
  int layer = 0;
  double lambda = 0, delta = 0, gamma = 0, w2 = 0, kl1 = 0;
};

struct ProbeLog {
  std::vector<ProbeRow> rows;

  static const char* header() { return "step,layer,lambda,delta,gamma,w2,kl1"; }

  std::string to_csv() const {
    std::ostringstream out;
    out << header() << '\n';
    char buf[40];
    auto put = [&](double v) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ',' << buf;
    };
    for (const auto& r : rows) {
      out << r.step << ',' << r.layer;
      for (double v : {r.lambda, r.delta, r.gamma, r.w2, r.kl1}) put(v);
      out << '\n';
    }
    return out.str();
  }

  void write(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for write");
    f << to_csv();
  }
};

inline GroupMetricsResult evaluate(const Model& model,
                                   const GroupedDataset& ds) {
  return group_metrics(model.predict(ds.features), ds);
}

// Deterministic epoch-based training loop. The trainer owns the optimizer,
// the RNG bundle and the step counters, so a checkpoint taken at an epoch
// boundary resumes the exact same trajectory.
class Trainer {
 public:
  Trainer(Model& model, const GroupedDataset& train_ds,
          const GroupedDataset& test_ds, TrainConfig cfg,
          std::string config_snapshot = "{}", bool record_probe = false)
      : model_(model),
        train_ds_(train_ds),
        test_ds_(test_ds),
        cfg_(std::move(cfg)),
        rng_(cfg_.seed),
        opt_(model.params()),
        config_snapshot_(std::move(config_snapshot)),
        record_probe_(record_probe) {
    cfg_.validate(model.num_adapted_layers());
    if (is_vae_family(cfg_.variant) !=
        is_vae_family(model.adapter_config().variant))
      throw ConfigError("train.variant disagrees with the model's adapters");
    if (train_ds_.features.cols != model.spec().input_dim())
      throw ConfigError("training data dimension " +
                        std::to_string(train_ds_.features.cols) +
                        " does not match the model input " +
                        std::to_string(model.spec().input_dim()));
    priors_ = make_priors(model.adapter_config().rank_r,
                          model.adapter_config().z2_dim,
                          model.adapter_config().prior2_center);
  }

  int64_t steps_per_epoch() const {
    const auto n = static_cast<int64_t>(train_ds_.size());
    return (n + cfg_.batch_size - 1) / cfg_.batch_size;
  }

  int64_t total_steps() const { return steps_per_epoch() * cfg_.epochs; }
  int64_t global_step() const { return global_step_; }
  int epochs_done() const { return epoch_; }
  const MetricsLog& metrics() const { return metrics_; }
  const ProbeLog& probe() const { return probe_; }

  // Trains epochs [epochs_done, until_epoch); -1 means run to completion.
  void run(int until_epoch = -1) {
    const int stop = until_epoch < 0
                         ? cfg_.epochs
                         : std::min(until_epoch, cfg_.epochs);
    const auto n = static_cast<int64_t>(train_ds_.size());
    for (; epoch_ < stop; ++epoch_) {
      const auto perm =
          shuffled_indices(static_cast<size_t>(n), rng_.stream("shuffle"));
      for (int64_t begin = 0; begin < n; begin += cfg_.batch_size) {
        const int64_t end = std::min(n, begin + cfg_.batch_size);
        train_step(perm, begin, end);
        ++global_step_;
        if (global_step_ % cfg_.eval_every == 0 ||
            global_step_ == total_steps())
          log_eval_row();
      }
    }
  }

  void save_checkpoint(const std::string& path) const {
    Container c;
    c.config_json = config_snapshot_;
    for (const auto& p : model_.params().all()) {
      std::vector<uint64_t> dims;
      for (int d : p.shape) dims.push_back(static_cast<uint64_t>(d));
      c.add_f64("param." + p.name, dims, p.value);
    }
    for (const auto& [name, m] : opt_.moments_m())
      c.add_f64("adam.m." + name, {m.size()}, m);
    for (const auto& [name, v] : opt_.moments_v())
      c.add_f64("adam.v." + name, {v.size()}, v);
    for (const auto& [name, stream] : rng_.streams()) {
      const auto words = stream.save_state();
      c.add_i64("rng." + name, {4},
                {static_cast<int64_t>(words[0]), static_cast<int64_t>(words[1]),
                 static_cast<int64_t>(words[2]),
                 static_cast<int64_t>(words[3])});
    }
    c.add_i64("state", {3},
              {static_cast<int64_t>(epoch_), global_step_, opt_.step_count()});
    c.write(path);
  }

  // Restores parameters, optimizer moments, RNG streams and counters. The
  // model layout must match the checkpoint (same config).
  void restore_checkpoint(const std::string& path) {
    Container c = Container::read(path);
    for (auto& p : model_.params().all()) {
      const auto& e = c.find("param." + p.name);
      if (e.f64.size() != p.size())
        throw IoError("checkpoint: size mismatch for '" + p.name + "'");
      p.value = e.f64;
    }
    std::map<std::string, std::vector<double>> m, v;
    for (const auto& p : model_.params().all()) {
      if (!p.trainable) continue;
      m[p.name] = c.find("adam.m." + p.name).f64;
      v[p.name] = c.find("adam.v." + p.name).f64;
    }
    const auto& state = c.find("state").i64;
    opt_.restore(state[2], std::move(m), std::move(v));
    epoch_ = static_cast<int>(state[0]);
    global_step_ = state[1];
    for (const auto& e : c.entries()) {
      if (e.name.rfind("rng.", 0) != 0) continue;
      rng_.restore_stream(e.name.substr(4),
                          {static_cast<uint64_t>(e.i64[0]),
                           static_cast<uint64_t>(e.i64[1]),
                           static_cast<uint64_t>(e.i64[2]),
                           static_cast<uint64_t>(e.i64[3])});
    }
  }

  const std::string& config_snapshot() const { return config_snapshot_; }

 private:
  void train_step(const std::vector<size_t>& perm, int64_t begin, int64_t end) {
    const int rows = static_cast<int>(end - begin);
    Matrix bx(rows, train_ds_.features.cols);
    std::vector<int> by(static_cast<size_t>(rows));
    for (int i = 0; i < rows; ++i) {
      const size_t src = perm[static_cast<size_t>(begin + i)];
      by[static_cast<size_t>(i)] = train_ds_.labels[src];
      for (int j = 0; j < bx.cols; ++j)
        bx.at(i, j) = train_ds_.features.at(static_cast<int>(src), j);
    }

    Graph g;
    ModelForward fwd = model_.forward_train(g, bx, rng_);
    Tensor down = softmax_cross_entropy(g, fwd.logit_chunks, by,
                                        model_.spec().num_classes());

    std::vector<Tensor> elbos;
    std::vector<LossBreakdown> layer_breakdowns;
    last_probe_.assign(static_cast<size_t>(model_.num_adapted_layers()),
                       ProbeStats{});
    if (is_vae_family(cfg_.variant)) {
      for (size_t l = 0; l < fwd.layer_inters.size(); ++l) {
        const auto& chunks = fwd.layer_inters[l];
        std::pair<Tensor, LossBreakdown> r;
        switch (cfg_.variant) {
          case AdapterVariant::Fvae:
            r = fvae_elbo(g, chunks, cfg_.coeffs, priors_);
            break;
          case AdapterVariant::Vae2lat:
            r = vae2lat_elbo(g, chunks, priors_);
            break;
          default:
            r = beta_vae2lat_elbo(g, chunks, priors_, cfg_.coeffs.beta);
            break;
        }
        elbos.push_back(r.first);
        layer_breakdowns.push_back(r.second);
        ProbeStats ps = probe_stats(g, chunks, priors_);
        last_probe_[l] = ps;
        if (record_probe_)
          probe_.rows.push_back({global_step_, static_cast<int>(l), ps.lambda,
                                 ps.delta, ps.gamma, ps.w2, ps.kl1});
      }
    }

    ObjectiveCoeffs step_coeffs = cfg_.coeffs;
    if (!is_vae_family(cfg_.variant)) step_coeffs.lambda_per_layer.clear();
    auto [total, tb] = total_loss(g, down, elbos, step_coeffs);

    const double total_v = total.item();
    if (!std::isfinite(total_v) ||
        std::fabs(total_v) > cfg_.divergence_threshold)
      throw Error("training diverged at step " + std::to_string(global_step_) +
                  ": total loss = " + std::to_string(total_v));

    // Exact bookkeeping identity, asserted on every step.
    double check = tb.downstream;
    for (size_t l = 0; l < elbos.size(); ++l)
      check -= step_coeffs.lambda_per_layer[l] * elbos[l].item();
    if (std::fabs(total_v - check) > 1e-10)
      throw Error("loss bookkeeping violated at step " +
                  std::to_string(global_step_));

    g.backward(total);

    std::map<std::string, const std::vector<double>*> grads;
    for (const auto& p : model_.params().all()) {
      if (!p.trainable) continue;
      grads[p.name] = g.grad_by_name(p.name);
    }
    const double lr_t = lr_at(global_step_, total_steps(),
                              cfg_.warmup_fraction, cfg_.lr);
    opt_.step(model_.params(), grads, lr_t, cfg_.weight_decay,
              cfg_.nonfinite_policy);

    last_breakdown_ = LossBreakdown{};
    last_breakdown_.downstream = tb.downstream;
    last_breakdown_.total = total_v;
    last_breakdown_.elbo = tb.elbo;
    if (!layer_breakdowns.empty()) {
      const double inv = 1.0 / static_cast<double>(layer_breakdowns.size());
      for (const auto& lb : layer_breakdowns) {
        last_breakdown_.recon += lb.recon * inv;
        last_breakdown_.kl1 += lb.kl1 * inv;
        last_breakdown_.kl2 += lb.kl2 * inv;
        last_breakdown_.lambda_mismatch += lb.lambda_mismatch * inv;
        last_breakdown_.delta_discrepancy += lb.delta_discrepancy * inv;
        last_breakdown_.gamma += lb.gamma * inv;
      }
    }
  }

  void log_eval_row() {
    GroupMetricsResult m = evaluate(model_, test_ds_);
    MetricsRow row;
    row.step = global_step_;
    row.split = "eval";
    row.loss_total = last_breakdown_.total;
    row.loss_downstream = last_breakdown_.downstream;
    row.recon = last_breakdown_.recon;
    row.kl1 = last_breakdown_.kl1;
    row.lambda = last_breakdown_.lambda_mismatch;
    row.delta = last_breakdown_.delta_discrepancy;
    row.gamma = last_breakdown_.gamma;
    if (!last_probe_.empty()) {
      double w2 = 0.0;
      for (const auto& ps : last_probe_) w2 += ps.w2;
      row.w2 = w2 / static_cast<double>(last_probe_.size());
    }
    row.acc = m.avg;
    row.wg = m.wg;
    row.avg = m.avg;
    row.disparity = m.disparity;
    metrics_.rows.push_back(std::move(row));
  }

  Model& model_;
  const GroupedDataset& train_ds_;
  const GroupedDataset& test_ds_;
  TrainConfig cfg_;
  RngBundle rng_;
  AdamW opt_;
  LatentPriors priors_;
  std::string config_snapshot_;
  bool record_probe_;
  MetricsLog metrics_;
  ProbeLog probe_;
  int epoch_ = 0;
  int64_t global_step_ = 0;
  LossBreakdown last_breakdown_;
  std::vector<ProbeStats> last_probe_;
};

}  // namespace fvae
