#pragma once
// Comparative analyses over archived attack traces: matched-fraction precision
// (staged attack vs global threshold), the uniform-budget ablation, stopping
// criterion comparison, and the multi-shot study.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "oslolab/baselines.hpp"
#include "oslolab/engine.hpp"
#include "oslolab/metrics.hpp"

namespace oslolab {

// Rates computed by querying the target once per archived trace.
struct DecisionSummary {
  std::vector<MembershipDecision> decisions;
  std::optional<double> tpr;        // null when the panel has no members
  double fpr = 0;
  std::optional<double> precision;  // null when nothing is flagged
  int64_t flagged = 0;
  double flagged_fraction = 0;
};

// traces[i] must correspond to panel[i].
DecisionSummary decide_panel(std::vector<AdvTrace>& traces, const std::vector<PanelSample>& panel,
                             const ModelHandle& target, QueryAudit& audit);

struct ComparisonRow {
  std::string attack;       // "oslo" | "global-threshold"
  double parameter = 0;     // tau for oslo, magnitude threshold for the baseline
  int64_t flagged = 0;
  double flagged_fraction = 0;
  std::optional<double> precision;
  int64_t false_positives = 0;
};

struct ComparisonReport {
  double requested_fraction = 0;
  bool matched_within_one = false;  // |oslo flagged - baseline flagged| <= 1
  ComparisonRow oslo;
  ComparisonRow global_threshold;
};

// Picks the sweep point whose flagged fraction is nearest the request, then a
// magnitude threshold over the flip-search traces flagging the nearest
// achievable count to the staged attack's.
ComparisonReport matched_fraction_comparison(const SweepResult& sweep,
                                             const std::vector<PanelSample>& panel,
                                             const std::vector<AdvTrace>& flip_traces,
                                             double fraction);

// {small, medium, large} uniform budgets: large covers the given quantile of
// the validation-flip radii (rounded up to 1/255 steps), halved twice down.
std::vector<double> calibrate_epsilon_grid(const std::vector<AdvTrace>& nonmember_label_flip_traces,
                                           double cover = 0.99);

struct BudgetPoint {
  double eps = 0;
  std::optional<double> tpr;
  double fpr = 0;
};

// No validation models, no early stop: every sample is pushed to the full
// uniform budget and the target is queried once at the end.
std::vector<BudgetPoint> uniform_budget_ablation(const std::vector<PanelSample>& panel,
                                                 const ModelHandle& target,
                                                 const SourceEnsemble& g, AttackConfig cfg,
                                                 const std::vector<double>& eps_list,
                                                 uint64_t seed, QueryAudit& audit, int jobs);

struct StopModeRow {
  std::string mode;  // "tau-threshold" or "label-flip"
  double tau = -1;   // -1 for label-flip
  std::optional<double> tpr;
  double fpr = 0;
};

// Rates per stopping rule from one sweep's archives (label-flip decisions are
// made here, with fresh target queries on the audit).
std::vector<StopModeRow> stop_mode_comparison(SweepResult& sweep,
                                              const std::vector<PanelSample>& panel,
                                              const ModelHandle& target, QueryAudit& audit);

struct ShotPoint {
  int64_t shots = 0;
  std::optional<double> precision;
  std::optional<double> recall;
  int64_t queries = 0;
};

// All-shots-agree rule over descending-tau prefixes that end at the lowest
// tau: s shots consume the s lowest-tau trace sets.
std::vector<ShotPoint> multishot_study(SweepResult& sweep, const std::vector<PanelSample>& panel,
                                       const ModelHandle& target,
                                       const std::vector<int64_t>& shot_counts, QueryAudit& audit);

void save_comparison_csv(const std::string& path, const ComparisonReport& report);
std::string comparison_markdown(const ComparisonReport& report);

}  // namespace oslolab
