#pragma once
// Evaluation metrics: ROC with grouped ties, low-FPR TPR, precision/recall,
// perturbation CDFs, query accounting, and a rank-sum test.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace oslolab {

struct ScoredEntry {
  int64_t sample_id = 0;
  double score = 0;      // higher = more member-like
  bool is_member = false;
};

struct ScoredPanel {
  std::vector<ScoredEntry> entries;

  // Ratio metrics need both classes present.
  void validate() const;
};

struct RocPoint {
  double threshold = 0;  // decision rule: member <=> score >= threshold
  double tpr = 0;
  double fpr = 0;
  std::optional<double> precision;  // null when nothing is flagged
  double recall = 0;
};

using MetricCurve = std::vector<RocPoint>;

// One point per distinct threshold (score values plus +inf), ties grouped,
// ordered by descending threshold so TPR/FPR are non-decreasing along the curve.
MetricCurve roc_points(const ScoredPanel& panel);

// Max TPR over thresholds whose FPR <= cap.
double tpr_at_fpr(const ScoredPanel& panel, double fpr_cap);

struct PrecisionRecall {
  std::optional<double> precision;  // null when zero flagged
  std::optional<double> recall;     // null when zero members
  int64_t true_positives = 0;
  int64_t false_positives = 0;
  int64_t flagged = 0;
};

// decisions[i] pairs with truth[i]; true = flagged member / actual member.
PrecisionRecall precision_recall(const std::vector<bool>& decisions,
                                 const std::vector<bool>& truth);

struct CdfTable {
  std::vector<double> values;      // sorted ascending, distinct
  std::vector<double> cumulative;  // non-decreasing, last = 1 (empty input -> empty)
};

CdfTable empirical_cdf(std::vector<double> values);

struct PerturbationCdfs {
  CdfTable members;
  CdfTable nonmembers;
};

// magnitudes[i] belongs to the member group iff is_member[i].
PerturbationCdfs perturbation_cdf(const std::vector<double>& magnitudes,
                                  const std::vector<bool>& is_member);

struct QueryUsage {
  std::string attack;
  std::vector<int64_t> per_sample;  // queries charged per panel sample
  int64_t audited = 0;              // value of the shared atomic counter
};

struct QueryTotal {
  std::string attack;
  int64_t total = 0;
};

// Sums per-sample charges; throws if a sum disagrees with the audited counter.
std::vector<QueryTotal> query_report(const std::vector<QueryUsage>& usages);

// One-sided Wilcoxon rank-sum (Mann-Whitney) p-value for H1: xs stochastically
// greater than ys. Normal approximation with tie and continuity corrections.
double rank_sum_p_greater(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace oslolab
