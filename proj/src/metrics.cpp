#include "oslolab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace oslolab {

void ScoredPanel::validate() const {
  bool any_member = false, any_nonmember = false;
  for (const ScoredEntry& e : entries) (e.is_member ? any_member : any_nonmember) = true;
  if (!any_member || !any_nonmember)
    throw std::invalid_argument("scored panel: needs at least one member and one non-member");
}

MetricCurve roc_points(const ScoredPanel& panel) {
  panel.validate();
  std::vector<ScoredEntry> sorted = panel.entries;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const ScoredEntry& a, const ScoredEntry& b) { return a.score > b.score; });
  int64_t members = 0, nonmembers = 0;
  for (const ScoredEntry& e : sorted) (e.is_member ? members : nonmembers) += 1;

  MetricCurve curve;
  curve.push_back(RocPoint{std::numeric_limits<double>::infinity(), 0, 0, std::nullopt, 0});
  int64_t tp = 0, fp = 0;
  size_t i = 0;
  while (i < sorted.size()) {
    const double thr = sorted[i].score;
    while (i < sorted.size() && sorted[i].score == thr) {  // group ties at one threshold
      (sorted[i].is_member ? tp : fp) += 1;
      ++i;
    }
    RocPoint pt;
    pt.threshold = thr;
    pt.tpr = static_cast<double>(tp) / static_cast<double>(members);
    pt.fpr = static_cast<double>(fp) / static_cast<double>(nonmembers);
    pt.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    pt.recall = pt.tpr;
    curve.push_back(pt);
  }
  return curve;
}

double tpr_at_fpr(const ScoredPanel& panel, double fpr_cap) {
  if (fpr_cap < 0 || fpr_cap > 1) throw std::invalid_argument("tpr_at_fpr: cap outside [0,1]");
  double best = 0;
  for (const RocPoint& pt : roc_points(panel))
    if (pt.fpr <= fpr_cap) best = std::max(best, pt.tpr);
  return best;
}

PrecisionRecall precision_recall(const std::vector<bool>& decisions,
                                 const std::vector<bool>& truth) {
  if (decisions.size() != truth.size())
    throw std::invalid_argument("precision_recall: decisions/truth size mismatch");
  PrecisionRecall pr;
  int64_t members = 0;
  for (size_t i = 0; i < decisions.size(); ++i) {
    members += truth[i] ? 1 : 0;
    if (decisions[i]) {
      pr.flagged += 1;
      (truth[i] ? pr.true_positives : pr.false_positives) += 1;
    }
  }
  if (pr.flagged > 0)
    pr.precision = static_cast<double>(pr.true_positives) / static_cast<double>(pr.flagged);
  if (members > 0)
    pr.recall = static_cast<double>(pr.true_positives) / static_cast<double>(members);
  return pr;
}

CdfTable empirical_cdf(std::vector<double> values) {
  CdfTable t;
  if (values.empty()) return t;
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  size_t i = 0;
  while (i < values.size()) {
    const double v = values[i];
    while (i < values.size() && values[i] == v) ++i;
    t.values.push_back(v);
    t.cumulative.push_back(static_cast<double>(i) / n);
  }
  return t;
}

PerturbationCdfs perturbation_cdf(const std::vector<double>& magnitudes,
                                  const std::vector<bool>& is_member) {
  if (magnitudes.size() != is_member.size())
    throw std::invalid_argument("perturbation_cdf: size mismatch");
  if (magnitudes.empty()) throw std::invalid_argument("perturbation_cdf: empty archive");
  std::vector<double> m, n;
  for (size_t i = 0; i < magnitudes.size(); ++i)
    (is_member[i] ? m : n).push_back(magnitudes[i]);
  return PerturbationCdfs{empirical_cdf(std::move(m)), empirical_cdf(std::move(n))};
}

std::vector<QueryTotal> query_report(const std::vector<QueryUsage>& usages) {
  std::vector<QueryTotal> out;
  for (const QueryUsage& u : usages) {
    int64_t sum = 0;
    for (int64_t q : u.per_sample) sum += q;
    if (sum != u.audited)
      throw std::runtime_error("query audit mismatch for " + u.attack + ": per-sample sum " +
                               std::to_string(sum) + " vs audited " + std::to_string(u.audited));
    out.push_back(QueryTotal{u.attack, sum});
  }
  return out;
}

double rank_sum_p_greater(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.empty() || ys.empty()) throw std::invalid_argument("rank_sum: empty group");
  const double n1 = static_cast<double>(xs.size());
  const double n2 = static_cast<double>(ys.size());
  std::vector<std::pair<double, int>> all;  // (value, group: 0=x 1=y)
  all.reserve(xs.size() + ys.size());
  for (double v : xs) all.emplace_back(v, 0);
  for (double v : ys) all.emplace_back(v, 1);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  const double n = n1 + n2;
  double rank_sum_x = 0;
  double tie_term = 0;
  size_t i = 0;
  while (i < all.size()) {
    size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    const double t = static_cast<double>(j - i);
    if (t > 1) tie_term += t * (t * t - 1.0);
    for (size_t k = i; k < j; ++k)
      if (all[k].second == 0) rank_sum_x += avg_rank;
    i = j;
  }
  const double u = rank_sum_x - n1 * (n1 + 1.0) / 2.0;
  const double mu = n1 * n2 / 2.0;
  const double var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (var <= 0) return 1.0;  // all values tied: no evidence
  const double z = (u - mu - 0.5) / std::sqrt(var);  // continuity-corrected
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

}  // namespace oslolab
