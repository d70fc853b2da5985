#pragma once
// Label-only baseline attacks: Gaussian-noise boundary distance, augmentation
// robustness, shadow-transfer confidence, and the global-threshold rule over
// perturbation traces (including a per-target flip search).

#include <cstdint>
#include <string>
#include <vector>

#include "oslolab/engine.hpp"
#include "oslolab/models.hpp"
#include "oslolab/tape.hpp"

namespace oslolab {

struct GaussianConfig {
  std::vector<double> sigma_grid = {0.02, 0.05, 0.1, 0.2, 0.4, 0.8};  // increasing
  int64_t trials_per_sigma = 5;
  int64_t query_budget = 700;

  void validate() const;
};

struct TranslationOffset {
  int64_t dy = 0;
  int64_t dx = 0;
};

struct AugmentationConfig {
  std::vector<double> rotation_grid = {0, -5, 5, -10, 10};  // degrees
  std::vector<TranslationOffset> translation_grid = {{0, 1}, {0, -1}, {1, 0}, {-1, 0}};

  void validate() const;
  int64_t grid_size() const;
};

struct ShadowConfig {
  ArchSpec shadow_arch;
  TrainConfig train;
  int64_t relabel_budget = 0;  // must cover one query per shadow sample

  void validate() const;
};

struct GaussianScore {
  double score = 0;  // smallest flipping sigma, or sigma-max if never flips
  bool budget_exhausted = false;
  int64_t queries = 0;
};

// Smallest grid sigma at which the majority of noisy trials flip the label.
GaussianScore gaussian_boundary_score(const ModelHandle& f, const Tensor& x, int64_t y,
                                      const GaussianConfig& cfg, uint64_t seed,
                                      QueryAudit& audit);

// Count of augmented variants still classified y (one query each).
int64_t augmentation_attack_score(const ModelHandle& f, const Tensor& x, int64_t y,
                                  const AugmentationConfig& cfg, QueryAudit& audit);

struct ShadowResult {
  ModelHandle shadow;
  std::vector<double> scores;  // shadow's true-class confidence per panel sample
  int64_t relabel_queries = 0;
};

// Trains a shadow model on target-relabeled data, scores the panel with it.
ShadowResult shadow_transfer_scores(const ModelHandle& f, const LabeledDataset& shadow_data,
                                    const ShadowConfig& cfg, const std::vector<PanelSample>& panel,
                                    QueryAudit& audit);

// member <=> recorded perturbation magnitude >= threshold.
std::vector<MembershipDecision> global_threshold_decisions(const std::vector<AdvTrace>& traces,
                                                           double threshold);

// Walks the staged attack but stops at the first iterate the *target*
// misclassifies (one query per iterate, audited). A sample the target already
// misclassifies unperturbed stops immediately with distance 0 and stage 0.
AdvTrace target_flip_search(const Tensor& x, int64_t y, const ModelHandle& f,
                            const SourceEnsemble& g, const AttackConfig& cfg, uint64_t seed,
                            QueryAudit& audit,
                            const std::vector<const Tensor*>& admix_pool = {});

// Flip search over a panel (parallel over samples, deterministic results).
std::vector<AdvTrace> target_flip_search_panel(const std::vector<PanelSample>& panel,
                                               const ModelHandle& f, const SourceEnsemble& g,
                                               const AttackConfig& cfg, uint64_t seed,
                                               QueryAudit& audit, int jobs,
                                               const std::vector<const Tensor*>& admix_pool = {});

struct BaselineScoreRow {
  int64_t sample_id = 0;
  double score = 0;
  bool is_member = false;
  int64_t queries = 0;
};

void save_scores_csv(const std::string& path, const std::vector<BaselineScoreRow>& rows);
std::vector<BaselineScoreRow> load_scores_csv(const std::string& path);

}  // namespace oslolab
