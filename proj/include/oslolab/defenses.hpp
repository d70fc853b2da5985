#pragma once
// Defended target training: L1/L2 weight decay, dropout, DP-SGD (per-example
// clipping + Gaussian noise), and PGD adversarial training. A defended model
// is an ordinary ModelHandle so attack code paths are unchanged.

#include <cstdint>
#include <string>
#include <vector>

#include "oslolab/models.hpp"
#include "oslolab/rng.hpp"
#include "oslolab/tensor.hpp"

namespace oslolab {

struct DpsgdConfig {
  double clip_bound = 1.2;
  double noise_multiplier = 0.01;  // noise std = multiplier * clip_bound, on the sum
};

struct PgdConfig {
  double eps = 4.0 / 255.0;
  int64_t steps = 7;
  double alpha = 1.0 / 255.0;  // eps/4
};

struct DefenseConfig {
  std::string kind = "l2";  // l2 | l1 | dropout | dpsgd | adv-train
  double l2_lambda = 0.01;
  double l1_lambda = 5e-6;
  double dropout_rate = 0.5;
  DpsgdConfig dpsgd;
  PgdConfig adv;

  void validate() const;
};

// Default sweep grids, weakest to strongest.
std::vector<double> defense_grid(const std::string& kind);

struct DefendedModel {
  ModelHandle model;
  // One entry per (step, example) for dpsgd runs: exact post-clip l2 norm.
  std::vector<double> dpsgd_post_clip_norms;
};

DefendedModel train_defended(const ArchSpec& arch, const LabeledDataset& data,
                             const std::vector<int64_t>& subset, const TrainConfig& train_cfg,
                             const DefenseConfig& def_cfg);
DefendedModel train_defended(const ArchSpec& arch, const LabeledDataset& data,
                             const TrainConfig& train_cfg, const DefenseConfig& def_cfg);

// Clips each per-example gradient to l2 norm <= C, adds N(0, (noise*C)^2) per
// coordinate to the sum, returns the mean. Appends each exact post-clip norm
// (min(||g||, C)) to post_clip_norms when given. Grads must share one shape.
Tensor dpsgd_step(const std::vector<Tensor>& per_example_grads, double C,
                  double noise_multiplier, Rng& rng,
                  std::vector<double>* post_clip_norms = nullptr);

// Inner PGD maximization: per-example best-loss iterate over {clean, steps};
// sign steps of alpha, projected to the eps-ball and the [0,1] box.
Tensor pgd_attack_batch(const ModelHandle& m, const Tensor& batch,
                        const std::vector<int64_t>& labels, const PgdConfig& cfg);

struct AdvBatchStats {
  double clean_loss = 0;
  double adv_loss = 0;  // >= clean_loss by construction
};

// One adversarial training step: PGD on current weights, then an optimizer
// step on the adversarial batch.
AdvBatchStats adv_train_batch(ModelHandle& m, OptimizerState& opt, const TrainConfig& cfg,
                              const Tensor& batch, const std::vector<int64_t>& labels,
                              const PgdConfig& pgd, Rng* dropout_rng);

}  // namespace oslolab
