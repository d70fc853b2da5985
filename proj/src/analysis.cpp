#include "oslolab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace oslolab {

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

std::string opt_str(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string("null");
}

}  // namespace

DecisionSummary decide_panel(std::vector<AdvTrace>& traces, const std::vector<PanelSample>& panel,
                             const ModelHandle& target, QueryAudit& audit) {
  check(traces.size() == panel.size(), "decide_panel: traces/panel size mismatch");
  DecisionSummary out;
  int64_t members = 0, tp = 0, fp = 0;
  for (size_t i = 0; i < panel.size(); ++i) {
    check(traces[i].sample_id == panel[i].id, "decide_panel: trace order mismatch");
    std::vector<AdvTrace> shot(1);
    shot[0] = std::move(traces[i]);
    MembershipDecision d = infer_membership(target, panel[i].y, shot, audit);
    traces[i] = std::move(shot[0]);
    members += panel[i].is_member ? 1 : 0;
    if (d.member) (panel[i].is_member ? tp : fp) += 1;
    out.decisions.push_back(d);
  }
  const int64_t nonmembers = static_cast<int64_t>(panel.size()) - members;
  out.flagged = tp + fp;
  out.flagged_fraction = static_cast<double>(out.flagged) / static_cast<double>(panel.size());
  if (members > 0) out.tpr = static_cast<double>(tp) / static_cast<double>(members);
  out.fpr = nonmembers > 0 ? static_cast<double>(fp) / static_cast<double>(nonmembers) : 0.0;
  if (out.flagged > 0) out.precision = static_cast<double>(tp) / static_cast<double>(out.flagged);
  return out;
}

ComparisonReport matched_fraction_comparison(const SweepResult& sweep,
                                             const std::vector<PanelSample>& panel,
                                             const std::vector<AdvTrace>& flip_traces,
                                             double fraction) {
  check(fraction >= 0 && fraction <= 1, "comparison: fraction outside [0,1]");
  check(!sweep.curve.empty(), "comparison: empty sweep");
  check(flip_traces.size() == panel.size(), "comparison: flip traces/panel size mismatch");
  const int64_t n = static_cast<int64_t>(panel.size());

  ComparisonReport rep;
  rep.requested_fraction = fraction;

  size_t pick = 0;
  for (size_t t = 1; t < sweep.curve.size(); ++t)
    if (std::abs(sweep.curve[t].flagged_fraction - fraction) <
        std::abs(sweep.curve[pick].flagged_fraction - fraction))
      pick = t;
  int64_t oslo_tp = 0, oslo_fp = 0;
  for (size_t i = 0; i < panel.size(); ++i)
    if (sweep.decisions[pick][i].member) (panel[i].is_member ? oslo_tp : oslo_fp) += 1;
  rep.oslo.attack = "oslo";
  rep.oslo.parameter = sweep.curve[pick].tau;
  rep.oslo.flagged = oslo_tp + oslo_fp;
  rep.oslo.flagged_fraction = static_cast<double>(rep.oslo.flagged) / static_cast<double>(n);
  if (rep.oslo.flagged > 0)
    rep.oslo.precision = static_cast<double>(oslo_tp) / static_cast<double>(rep.oslo.flagged);
  rep.oslo.false_positives = oslo_fp;

  // Candidate thresholds: +inf (flag none) then each distinct magnitude,
  // descending, so flagged counts rise monotonically.
  std::vector<double> mags;
  mags.reserve(flip_traces.size());
  for (const AdvTrace& tr : flip_traces) mags.push_back(tr.perturbation_linf);
  std::vector<double> cand = mags;
  std::sort(cand.begin(), cand.end(), std::greater<double>());
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
  cand.insert(cand.begin(), std::numeric_limits<double>::infinity());

  double best_thr = cand[0];
  int64_t best_diff = std::numeric_limits<int64_t>::max();
  for (double thr : cand) {
    int64_t flags = 0;
    for (double m : mags) flags += m >= thr ? 1 : 0;
    const int64_t diff = std::abs(flags - rep.oslo.flagged);
    if (diff < best_diff) {
      best_diff = diff;
      best_thr = thr;
    }
  }
  int64_t gt_tp = 0, gt_fp = 0;
  for (size_t i = 0; i < panel.size(); ++i) {
    check(flip_traces[i].sample_id == panel[i].id, "comparison: flip trace order mismatch");
    if (mags[i] >= best_thr) (panel[i].is_member ? gt_tp : gt_fp) += 1;
  }
  rep.global_threshold.attack = "global-threshold";
  rep.global_threshold.parameter = best_thr;
  rep.global_threshold.flagged = gt_tp + gt_fp;
  rep.global_threshold.flagged_fraction =
      static_cast<double>(rep.global_threshold.flagged) / static_cast<double>(n);
  if (rep.global_threshold.flagged > 0)
    rep.global_threshold.precision =
        static_cast<double>(gt_tp) / static_cast<double>(rep.global_threshold.flagged);
  rep.global_threshold.false_positives = gt_fp;
  rep.matched_within_one = std::abs(rep.global_threshold.flagged - rep.oslo.flagged) <= 1;
  return rep;
}

std::vector<double> calibrate_epsilon_grid(const std::vector<AdvTrace>& nonmember_label_flip_traces,
                                           double cover) {
  check(!nonmember_label_flip_traces.empty(), "epsilon grid: no calibration traces");
  check(cover > 0 && cover <= 1, "epsilon grid: cover outside (0,1]");
  const double walk_max = 80.0 / 255.0;
  std::vector<double> radii;
  radii.reserve(nonmember_label_flip_traces.size());
  for (const AdvTrace& tr : nonmember_label_flip_traces)
    radii.push_back(tr.exhausted ? std::numeric_limits<double>::infinity()
                                 : tr.perturbation_linf);
  std::sort(radii.begin(), radii.end());
  const size_t idx = static_cast<size_t>(
      std::ceil(cover * static_cast<double>(radii.size()))) - 1;
  double large = radii[idx];
  large = std::isfinite(large) ? std::min(std::ceil(large * 255.0) / 255.0, walk_max) : walk_max;
  const double floor = 1.0 / 255.0;
  const double medium = std::max(large / 2.0, floor);
  const double small = std::max(large / 4.0, floor);
  return {small, medium, large};
}

std::vector<BudgetPoint> uniform_budget_ablation(const std::vector<PanelSample>& panel,
                                                 const ModelHandle& target,
                                                 const SourceEnsemble& g, AttackConfig cfg,
                                                 const std::vector<double>& eps_list,
                                                 uint64_t seed, QueryAudit& audit, int jobs) {
  check(!panel.empty(), "budget ablation: empty panel");
  check(!eps_list.empty(), "budget ablation: empty eps list");
  const int64_t n = static_cast<int64_t>(panel.size());
  int64_t members = 0;
  for (const PanelSample& ps : panel) members += ps.is_member ? 1 : 0;
  const int64_t nonmembers = n - members;

  std::vector<BudgetPoint> out;
  for (double eps : eps_list) {
    cfg.eps_max = eps;
    cfg.validate();
    std::vector<Tensor> finals(panel.size());
    parallel_for(n, jobs, [&](int64_t s) {
      const PanelSample& ps = panel[static_cast<size_t>(s)];
      Tensor last = ps.x;
      walk_stages(ps.x, ps.y, g, cfg,
                  derive_seed(seed, "attack-sample-" + std::to_string(ps.id)),
                  [&](int64_t, int64_t, const Tensor& xi) {
                    last = xi;
                    return false;  // no early stop: exhaust the budget
                  });
      finals[static_cast<size_t>(s)] = std::move(last);
    });
    int64_t tp = 0, fp = 0;
    for (int64_t s = 0; s < n; ++s) {
      audit.count.fetch_add(1, std::memory_order_relaxed);
      const bool member =
          predict_label(target, finals[static_cast<size_t>(s)]) == panel[static_cast<size_t>(s)].y;
      if (member) (panel[static_cast<size_t>(s)].is_member ? tp : fp) += 1;
    }
    BudgetPoint pt;
    pt.eps = eps;
    if (members > 0) pt.tpr = static_cast<double>(tp) / static_cast<double>(members);
    pt.fpr = nonmembers > 0 ? static_cast<double>(fp) / static_cast<double>(nonmembers) : 0.0;
    out.push_back(pt);
  }
  return out;
}

std::vector<StopModeRow> stop_mode_comparison(SweepResult& sweep,
                                              const std::vector<PanelSample>& panel,
                                              const ModelHandle& target, QueryAudit& audit) {
  std::vector<StopModeRow> rows;
  for (const TauPoint& pt : sweep.curve)
    rows.push_back(StopModeRow{"tau-threshold", pt.tau, pt.tpr, pt.fpr});
  if (sweep.label_flip_traces) {
    const DecisionSummary d = decide_panel(*sweep.label_flip_traces, panel, target, audit);
    rows.push_back(StopModeRow{"label-flip", -1, d.tpr, d.fpr});
  }
  return rows;
}

std::vector<ShotPoint> multishot_study(SweepResult& sweep, const std::vector<PanelSample>& panel,
                                       const ModelHandle& target,
                                       const std::vector<int64_t>& shot_counts, QueryAudit& audit) {
  const int64_t T = static_cast<int64_t>(sweep.traces.size());
  std::vector<ShotPoint> out;
  for (int64_t s : shot_counts) {
    check(s >= 1 && s <= T, "multishot: shot count " + std::to_string(s) + " needs " +
                                std::to_string(s) + " tau values, have " + std::to_string(T));
    std::vector<bool> decisions(panel.size()), truth(panel.size());
    int64_t queries = 0;
    for (size_t i = 0; i < panel.size(); ++i) {
      std::vector<AdvTrace> shots;  // the s lowest-tau traces for this sample
      shots.reserve(static_cast<size_t>(s));
      for (int64_t t = T - s; t < T; ++t)
        shots.push_back(sweep.traces[static_cast<size_t>(t)][i]);
      const MembershipDecision d = infer_membership(target, panel[i].y, shots, audit);
      queries += s;
      decisions[i] = d.member;
      truth[i] = panel[i].is_member;
    }
    const PrecisionRecall pr = precision_recall(decisions, truth);
    out.push_back(ShotPoint{s, pr.precision, pr.recall, queries});
  }
  return out;
}

namespace {

void append_row(std::string& s, const ComparisonRow& r) {
  s += r.attack + "," + format_double(r.parameter) + "," + std::to_string(r.flagged) + "," +
       format_double(r.flagged_fraction) + "," + opt_str(r.precision) + "," +
       std::to_string(r.false_positives) + "\n";
}

}  // namespace

void save_comparison_csv(const std::string& path, const ComparisonReport& report) {
  std::ofstream out(path);
  if (!out.is_open()) throw std::runtime_error("comparison: cannot write " + path);
  std::string s = "attack,parameter,flagged,flagged_fraction,precision,false_positives\n";
  append_row(s, report.oslo);
  append_row(s, report.global_threshold);
  out << s;
  if (!out.good()) throw std::runtime_error("comparison: write failed for " + path);
}

std::string comparison_markdown(const ComparisonReport& report) {
  std::string s;
  s += "| attack | parameter | flagged | fraction | precision | false positives |\n";
  s += "|---|---|---|---|---|---|\n";
  const auto row = [&](const ComparisonRow& r) {
    s += "| " + r.attack + " | " + format_double(r.parameter) + " | " +
         std::to_string(r.flagged) + " | " + format_double(r.flagged_fraction) + " | " +
         opt_str(r.precision) + " | " + std::to_string(r.false_positives) + " |\n";
  };
  row(report.oslo);
  row(report.global_threshold);
  s += "\nrequested fraction " + format_double(report.requested_fraction) + ", flagged counts " +
       (report.matched_within_one ? "matched within one sample" : "NOT matched within one sample") +
       "\n";
  return s;
}

}  // namespace oslolab
