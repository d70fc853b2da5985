#include "oslolab/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "oslolab/dataset.hpp"
#include "oslolab/tape.hpp"

namespace oslolab {

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// Per-row cross entropy from plain logits, no tape.
std::vector<double> per_row_ce(const ModelHandle& m, const Tensor& batch,
                               const std::vector<int64_t>& labels) {
  const Tensor z = logits(m, batch);
  const int64_t B = z.dim(0), C = z.dim(1);
  std::vector<double> out(static_cast<size_t>(B));
  for (int64_t r = 0; r < B; ++r) {
    const double* row = z.data.data() + r * C;
    double mx = row[0];
    for (int64_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double s = 0;
    for (int64_t c = 0; c < C; ++c) s += std::exp(row[c] - mx);
    out[static_cast<size_t>(r)] =
        mx + std::log(s) - row[labels[static_cast<size_t>(r)]];
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

Tensor flatten_grads(const std::vector<Tensor>& grads, int64_t total) {
  Tensor flat({total});
  int64_t at = 0;
  for (const Tensor& g : grads) {
    std::copy(g.data.begin(), g.data.end(), flat.data.begin() + at);
    at += g.numel();
  }
  return flat;
}

}  // namespace

void DefenseConfig::validate() const {
  check(kind == "l2" || kind == "l1" || kind == "dropout" || kind == "dpsgd" ||
            kind == "adv-train",
        "defense: unknown kind: " + kind);
  check(l2_lambda > 0, "defense: l2 lambda must be > 0");
  check(l1_lambda > 0, "defense: l1 lambda must be > 0");
  check(dropout_rate > 0 && dropout_rate < 1, "defense: dropout rate must be in (0,1)");
  check(dpsgd.clip_bound > 0, "defense: dpsgd clip bound must be > 0");
  check(dpsgd.noise_multiplier >= 0, "defense: dpsgd noise multiplier must be >= 0");
  check(adv.eps >= 0 && adv.eps <= 1, "defense: pgd eps must be in [0,1]");
  check(adv.steps >= 0, "defense: pgd steps must be >= 0");
  check(adv.alpha > 0, "defense: pgd alpha must be > 0");
}

std::vector<double> defense_grid(const std::string& kind) {
  if (kind == "l2") return {0.001, 0.005, 0.01};
  if (kind == "l1") return {5e-6, 1e-5, 5e-5};
  if (kind == "dropout") return {0.3, 0.5, 0.7};
  if (kind == "dpsgd") return {0.005, 0.01, 0.05};  // noise multipliers at C=1.2
  if (kind == "adv-train") return {4.0 / 255.0};
  throw std::invalid_argument("defense: unknown kind: " + kind);
}

Tensor dpsgd_step(const std::vector<Tensor>& per_example_grads, double C,
                  double noise_multiplier, Rng& rng, std::vector<double>* post_clip_norms) {
  check(!per_example_grads.empty(), "dpsgd_step: empty batch");
  check(C > 0, "dpsgd_step: clip bound must be > 0");
  const Tensor& first = per_example_grads[0];
  Tensor sum = Tensor::zeros(first.shape);
  for (const Tensor& g : per_example_grads) {
    check(g.same_shape(first), "dpsgd_step: gradient shape mismatch");
    const double norm = l2_norm(g);
    const double s = norm > C ? C / norm : 1.0;
    axpy(s, g, sum);
    if (post_clip_norms) post_clip_norms->push_back(std::min(norm, C));
  }
  if (noise_multiplier > 0) {
    const double std = noise_multiplier * C;
    for (double& v : sum.data) v += std * rng.normal();
  }
  return scale(sum, 1.0 / static_cast<double>(per_example_grads.size()));
}

Tensor pgd_attack_batch(const ModelHandle& m, const Tensor& batch,
                        const std::vector<int64_t>& labels, const PgdConfig& cfg) {
  check(batch.rank() == 4, "pgd: expected [B,C,H,W], got " + batch.shape_str());
  check(static_cast<int64_t>(labels.size()) == batch.dim(0), "pgd: labels/batch size mismatch");
  Tensor best = batch;
  if (cfg.eps == 0 || cfg.steps == 0) return best;
  std::vector<double> best_loss = per_row_ce(m, batch, labels);
  const int64_t row = batch.numel() / batch.dim(0);

  Tensor xi = batch;
  for (int64_t s = 0; s < cfg.steps; ++s) {
    Tape t;
    Var xv = t.leaf(xi, /*needs_grad=*/true);
    Var z = forward_on_tape(t, m, xv);
    Var loss = t.cross_entropy_logits(z, labels);
    t.backward(loss);
    const Tensor g = t.grad(xv);
    for (int64_t i = 0; i < xi.numel(); ++i)
      xi[i] += cfg.alpha * (g[i] > 0 ? 1.0 : (g[i] < 0 ? -1.0 : 0.0));
    clamp_ball_inplace(xi, batch, cfg.eps);
    clamp_inplace(xi, 0, 1);
    const std::vector<double> losses = per_row_ce(m, xi, labels);
    for (int64_t b = 0; b < batch.dim(0); ++b) {
      if (losses[static_cast<size_t>(b)] > best_loss[static_cast<size_t>(b)]) {
        best_loss[static_cast<size_t>(b)] = losses[static_cast<size_t>(b)];
        std::copy(xi.data.begin() + b * row, xi.data.begin() + (b + 1) * row,
                  best.data.begin() + b * row);
      }
    }
  }
  return best;
}

AdvBatchStats adv_train_batch(ModelHandle& m, OptimizerState& opt, const TrainConfig& cfg,
                              const Tensor& batch, const std::vector<int64_t>& labels,
                              const PgdConfig& pgd, Rng* dropout_rng) {
  AdvBatchStats stats;
  stats.clean_loss = mean_of(per_row_ce(m, batch, labels));
  const Tensor adv = pgd_attack_batch(m, batch, labels, pgd);
  stats.adv_loss = mean_of(per_row_ce(m, adv, labels));

  Tape t;
  Var x = t.constant(adv);
  std::vector<Var> params;
  Var z = forward_on_tape(t, m, x, /*train=*/true, dropout_rng, &params,
                          /*params_need_grad=*/true);
  Var loss = t.cross_entropy_logits(z, labels);
  if (!std::isfinite(t.value(loss).data[0]))
    throw std::runtime_error("adv-train: non-finite loss");
  t.backward(loss);
  std::vector<Tensor> grads(m.weights.size());
  for (size_t p = 0; p < grads.size(); ++p) grads[p] = t.grad(params[p]);
  opt.apply(m, cfg, grads);
  return stats;
}

namespace {

DefendedModel train_dpsgd(const ArchSpec& arch, const LabeledDataset& data,
                          const std::vector<int64_t>& subset, const TrainConfig& cfg,
                          const DpsgdConfig& dp) {
  DefendedModel out;
  ModelHandle& m = out.model;
  m = init_model(arch, cfg.seed);
  m.meta = cfg;
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));
  Rng noise_rng(derive_seed(cfg.seed, "dpsgd-noise"));
  OptimizerState opt(m);

  int64_t total = 0;
  for (const Tensor& w : m.weights) total += w.numel();
  const int64_t n = static_cast<int64_t>(subset.size());

  for (int64_t ep = 0; ep < cfg.epochs; ++ep) {
    const std::vector<int64_t> perm = shuffle_rng.permutation(n);
    double ep_loss = 0;
    for (int64_t at = 0; at < n; at += cfg.batch_size) {
      const int64_t bs = std::min(cfg.batch_size, n - at);
      std::vector<Tensor> flat_grads;
      flat_grads.reserve(static_cast<size_t>(bs));
      for (int64_t e = 0; e < bs; ++e) {
        const int64_t di = subset[static_cast<size_t>(perm[static_cast<size_t>(at + e)])];
        Tape t;
        Var x = t.constant(stack_batch(data, {di}));
        std::vector<Var> params;
        Var z = forward_on_tape(t, m, x, /*train=*/true, &dropout_rng, &params,
                                /*params_need_grad=*/true);
        Var loss = t.cross_entropy_logits(z, {data.labels[static_cast<size_t>(di)]});
        const double lv = t.value(loss).data[0];
        if (!std::isfinite(lv))
          throw std::runtime_error("dpsgd: non-finite loss at epoch " + std::to_string(ep));
        ep_loss += lv;
        t.backward(loss);
        std::vector<Tensor> grads(m.weights.size());
        for (size_t p = 0; p < grads.size(); ++p) grads[p] = t.grad(params[p]);
        flat_grads.push_back(flatten_grads(grads, total));
      }
      const Tensor flat = dpsgd_step(flat_grads, dp.clip_bound, dp.noise_multiplier, noise_rng,
                                     &out.dpsgd_post_clip_norms);
      std::vector<Tensor> grads;
      grads.reserve(m.weights.size());
      int64_t pos = 0;
      for (const Tensor& w : m.weights) {
        Tensor g(w.shape);
        std::copy(flat.data.begin() + pos, flat.data.begin() + pos + w.numel(), g.data.begin());
        pos += w.numel();
        grads.push_back(std::move(g));
      }
      opt.apply(m, cfg, grads);
    }
    m.loss_history.push_back(ep_loss / static_cast<double>(n));
  }
  return out;
}

DefendedModel train_adv(const ArchSpec& arch, const LabeledDataset& data,
                        const std::vector<int64_t>& subset, const TrainConfig& cfg,
                        const PgdConfig& pgd) {
  DefendedModel out;
  ModelHandle& m = out.model;
  m = init_model(arch, cfg.seed);
  m.meta = cfg;
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));
  OptimizerState opt(m);
  const int64_t n = static_cast<int64_t>(subset.size());

  for (int64_t ep = 0; ep < cfg.epochs; ++ep) {
    const std::vector<int64_t> perm = shuffle_rng.permutation(n);
    double ep_loss = 0;
    for (int64_t at = 0; at < n; at += cfg.batch_size) {
      const int64_t bs = std::min(cfg.batch_size, n - at);
      std::vector<int64_t> idx(static_cast<size_t>(bs));
      for (int64_t i = 0; i < bs; ++i)
        idx[static_cast<size_t>(i)] = subset[static_cast<size_t>(perm[static_cast<size_t>(at + i)])];
      const AdvBatchStats st = adv_train_batch(m, opt, cfg, stack_batch(data, idx),
                                               gather_labels(data, idx), pgd, &dropout_rng);
      ep_loss += st.adv_loss * static_cast<double>(bs);
    }
    m.loss_history.push_back(ep_loss / static_cast<double>(n));
  }
  return out;
}

}  // namespace

DefendedModel train_defended(const ArchSpec& arch, const LabeledDataset& data,
                             const std::vector<int64_t>& subset, const TrainConfig& train_cfg,
                             const DefenseConfig& def_cfg) {
  arch.validate();
  train_cfg.validate();
  def_cfg.validate();

  if (def_cfg.kind == "l2") {
    TrainConfig cfg = train_cfg;
    cfg.weight_decay_l2 = def_cfg.l2_lambda;
    return DefendedModel{train(arch, data, subset, cfg), {}};
  }
  if (def_cfg.kind == "l1") {
    TrainConfig cfg = train_cfg;
    cfg.weight_decay_l1 = def_cfg.l1_lambda;
    return DefendedModel{train(arch, data, subset, cfg), {}};
  }
  if (def_cfg.kind == "dropout") {
    ArchSpec a = arch;
    a.dropout_rate = def_cfg.dropout_rate;
    return DefendedModel{train(a, data, subset, train_cfg), {}};
  }
  if (def_cfg.kind == "dpsgd") return train_dpsgd(arch, data, subset, train_cfg, def_cfg.dpsgd);
  return train_adv(arch, data, subset, train_cfg, def_cfg.adv);
}

DefendedModel train_defended(const ArchSpec& arch, const LabeledDataset& data,
                             const TrainConfig& train_cfg, const DefenseConfig& def_cfg) {
  std::vector<int64_t> all(static_cast<size_t>(data.size()));
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int64_t>(i);
  return train_defended(arch, data, all, train_cfg, def_cfg);
}

}  // namespace oslolab
