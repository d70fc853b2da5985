#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "oslolab/metrics.hpp"
#include "oslolab/rng.hpp"

using namespace oslolab;

namespace {

// Independent oracle: evaluate the decision rule "member <=> score >= t" at
// every distinct score plus +inf, by direct counting.
MetricCurve brute_force_roc(const ScoredPanel& panel) {
  std::set<double, std::greater<double>> thresholds;
  thresholds.insert(std::numeric_limits<double>::infinity());
  for (const ScoredEntry& e : panel.entries) thresholds.insert(e.score);
  int64_t members = 0, nonmembers = 0;
  for (const ScoredEntry& e : panel.entries) (e.is_member ? members : nonmembers)++;
  MetricCurve curve;
  for (double t : thresholds) {
    int64_t tp = 0, fp = 0;
    for (const ScoredEntry& e : panel.entries)
      if (e.score >= t) (e.is_member ? tp : fp)++;
    RocPoint p;
    p.threshold = t;
    p.tpr = static_cast<double>(tp) / static_cast<double>(members);
    p.fpr = static_cast<double>(fp) / static_cast<double>(nonmembers);
    if (tp + fp > 0) p.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    p.recall = p.tpr;
    curve.push_back(p);
  }
  return curve;
}

ScoredPanel random_panel(Rng& rng, int64_t n) {
  ScoredPanel panel;
  for (int64_t i = 0; i < n; ++i) {
    ScoredEntry e;
    e.sample_id = i;
    // coarse grid forces score ties
    e.score = static_cast<double>(rng.uniform_int(0, 12)) / 12.0;
    e.is_member = rng.uniform() < 0.5;
    panel.entries.push_back(e);
  }
  // ensure both classes
  panel.entries[0].is_member = true;
  panel.entries[static_cast<size_t>(n - 1)].is_member = false;
  return panel;
}

}  // namespace

TEST_CASE("roc matches brute force on random tied panels") {
  Rng rng(411);
  for (int trial = 0; trial < 60; ++trial) {
    const ScoredPanel panel = random_panel(rng, 2 + rng.uniform_int(0, 62));
    const MetricCurve got = roc_points(panel);
    const MetricCurve want = brute_force_roc(panel);
    REQUIRE(got.size() == want.size());
    for (size_t i = 0; i < want.size(); ++i) {
      CAPTURE(trial);
      CAPTURE(i);
      CHECK(got[i].threshold == want[i].threshold);
      CHECK(got[i].tpr == doctest::Approx(want[i].tpr).epsilon(1e-12));
      CHECK(got[i].fpr == doctest::Approx(want[i].fpr).epsilon(1e-12));
      CHECK(got[i].recall == doctest::Approx(want[i].recall).epsilon(1e-12));
      REQUIRE(got[i].precision.has_value() == want[i].precision.has_value());
      if (want[i].precision)
        CHECK(*got[i].precision == doctest::Approx(*want[i].precision).epsilon(1e-12));
      if (i > 0) {
        CHECK(got[i].threshold < got[i - 1].threshold);
        CHECK(got[i].tpr >= got[i - 1].tpr);
        CHECK(got[i].fpr >= got[i - 1].fpr);
      }
    }
  }
}

TEST_CASE("tpr_at_fpr groups ties") {
  ScoredPanel panel;
  auto put = [&](double s, bool m) {
    ScoredEntry e;
    e.sample_id = static_cast<int64_t>(panel.entries.size());
    e.score = s;
    e.is_member = m;
    panel.entries.push_back(e);
  };
  put(0.9, true);
  put(0.8, true);
  put(0.8, true);
  put(0.2, true);
  put(0.8, false);  // tied with two members: they move together
  put(0.1, false);
  put(0.05, false);
  put(0.01, false);

  CHECK(tpr_at_fpr(panel, 0.0) == doctest::Approx(0.25));
  // the 0.8 block admits one false positive, so fpr<=0.2 cannot use it
  CHECK(tpr_at_fpr(panel, 0.2) == doctest::Approx(0.25));
  CHECK(tpr_at_fpr(panel, 0.25) == doctest::Approx(1.0));
  CHECK(tpr_at_fpr(panel, 1.0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(tpr_at_fpr(panel, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(tpr_at_fpr(panel, 1.5), std::invalid_argument);

  ScoredPanel onesided;
  onesided.entries = {panel.entries[0]};
  CHECK_THROWS_AS(roc_points(onesided), std::invalid_argument);
}

TEST_CASE("precision_recall counting and null cases") {
  const std::vector<bool> dec = {true, true, false, false};
  const std::vector<bool> tru = {true, false, true, false};
  const PrecisionRecall pr = precision_recall(dec, tru);
  CHECK(pr.true_positives == 1);
  CHECK(pr.false_positives == 1);
  CHECK(pr.flagged == 2);
  REQUIRE(pr.precision.has_value());
  REQUIRE(pr.recall.has_value());
  CHECK(*pr.precision == doctest::Approx(0.5));
  CHECK(*pr.recall == doctest::Approx(0.5));

  const PrecisionRecall none = precision_recall({false, false}, {true, false});
  CHECK_FALSE(none.precision.has_value());
  CHECK(none.flagged == 0);
  REQUIRE(none.recall.has_value());
  CHECK(*none.recall == 0.0);

  const PrecisionRecall nomem = precision_recall({true, false}, {false, false});
  CHECK_FALSE(nomem.recall.has_value());
  REQUIRE(nomem.precision.has_value());
  CHECK(*nomem.precision == 0.0);

  CHECK_THROWS_AS(precision_recall({true}, {true, false}), std::invalid_argument);
}

TEST_CASE("empirical cdf") {
  const CdfTable t = empirical_cdf({3.0, 1.0, 3.0, 2.0});
  REQUIRE(t.values == std::vector<double>({1.0, 2.0, 3.0}));
  REQUIRE(t.cumulative.size() == 3);
  CHECK(t.cumulative[0] == doctest::Approx(0.25));
  CHECK(t.cumulative[1] == doctest::Approx(0.5));
  CHECK(t.cumulative[2] == doctest::Approx(1.0));

  const CdfTable empty = empirical_cdf({});
  CHECK(empty.values.empty());
  CHECK(empty.cumulative.empty());
}

TEST_CASE("perturbation cdf splits groups") {
  const PerturbationCdfs cdfs =
      perturbation_cdf({1.0, 2.0, 3.0, 4.0}, {true, false, true, false});
  CHECK(cdfs.members.values == std::vector<double>({1.0, 3.0}));
  CHECK(cdfs.nonmembers.values == std::vector<double>({2.0, 4.0}));
  CHECK(cdfs.members.cumulative.back() == doctest::Approx(1.0));
  CHECK_THROWS_AS(perturbation_cdf({1.0}, {true, false}), std::invalid_argument);
  CHECK_THROWS_AS(perturbation_cdf({}, {}), std::invalid_argument);
}

TEST_CASE("query report sums and audits") {
  QueryUsage a;
  a.attack = "oslo";
  a.per_sample = {1, 1, 1, 1};
  a.audited = 4;
  QueryUsage b;
  b.attack = "gaussian";
  b.per_sample = {100, 240};
  b.audited = 340;
  const std::vector<QueryTotal> totals = query_report({a, b});
  REQUIRE(totals.size() == 2);
  CHECK(totals[0].attack == "oslo");
  CHECK(totals[0].total == 4);
  CHECK(totals[1].total == 340);

  b.audited = 341;
  CHECK_THROWS_AS(query_report({a, b}), std::runtime_error);
}

TEST_CASE("rank sum matches frozen reference values") {
  // references computed with an independent statistics package
  // (asymptotic normal approximation, continuity + tie corrections)
  const std::vector<double> x1 = {3.1, 4.5, 2.2, 5.0, 3.3, 4.1, 2.9, 3.8};
  const std::vector<double> y1 = {2.0, 3.0, 1.5, 2.8, 2.1, 3.2, 1.9, 2.5};
  CHECK(rank_sum_p_greater(x1, y1) == doctest::Approx(0.005040846941929832).epsilon(1e-9));

  const std::vector<double> x2 = {1.0, 2.0, 2.0, 3.0};
  const std::vector<double> y2 = {1.0, 2.0, 2.0, 2.0, 4.0};
  CHECK(rank_sum_p_greater(x2, y2) == doctest::Approx(0.6062967546668654).epsilon(1e-9));

  const std::vector<double> x3 = {5.0, 6.0};
  const std::vector<double> y3 = {1.0, 2.0, 3.0};
  CHECK(rank_sum_p_greater(x3, y3) == doctest::Approx(0.07445733658938286).epsilon(1e-9));

  // direction sanity: reversing the groups flips past 0.5
  CHECK(rank_sum_p_greater(y1, x1) > 0.5);
  CHECK_THROWS_AS(rank_sum_p_greater({}, y1), std::invalid_argument);
}
