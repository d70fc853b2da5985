#include "oslolab/baselines.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>
#include <fstream>
#include <stdexcept>

#include "oslolab/dataset.hpp"

namespace oslolab {

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

void GaussianConfig::validate() const {
  check(!sigma_grid.empty(), "gaussian baseline: empty sigma grid");
  for (size_t i = 1; i < sigma_grid.size(); ++i)
    check(sigma_grid[i] > sigma_grid[i - 1], "gaussian baseline: sigma grid must increase");
  check(sigma_grid[0] > 0, "gaussian baseline: sigmas must be positive");
  check(trials_per_sigma >= 1, "gaussian baseline: trials_per_sigma must be >= 1");
  check(query_budget >= 1, "gaussian baseline: query budget must be >= 1");
}

void AugmentationConfig::validate() const {
  check(!rotation_grid.empty() || !translation_grid.empty(),
        "augmentation baseline: empty transform grid");
}

int64_t AugmentationConfig::grid_size() const {
  return static_cast<int64_t>(rotation_grid.size() + translation_grid.size());
}

void ShadowConfig::validate() const {
  shadow_arch.validate();
  check(relabel_budget >= 1, "shadow baseline: relabel budget must be >= 1");
}

GaussianScore gaussian_boundary_score(const ModelHandle& f, const Tensor& x, int64_t y,
                                      const GaussianConfig& cfg, uint64_t seed,
                                      QueryAudit& audit) {
  cfg.validate();
  Rng rng(seed);
  GaussianScore out;
  out.score = cfg.sigma_grid.back();
  for (double sigma : cfg.sigma_grid) {
    if (out.queries + cfg.trials_per_sigma > cfg.query_budget) {
      out.budget_exhausted = true;  // verdict from the completed prefix
      return out;
    }
    int64_t flips = 0;
    for (int64_t t = 0; t < cfg.trials_per_sigma; ++t) {
      Tensor noisy = x;
      for (double& v : noisy.data) v += sigma * rng.normal();
      clamp_inplace(noisy, 0, 1);
      audit.count.fetch_add(1, std::memory_order_relaxed);
      out.queries += 1;
      if (predict_label(f, noisy) != y) flips += 1;
    }
    if (2 * flips > cfg.trials_per_sigma) {  // strict majority
      out.score = sigma;
      return out;
    }
  }
  return out;  // never flipped: sigma-max
}

int64_t augmentation_attack_score(const ModelHandle& f, const Tensor& x, int64_t y,
                                  const AugmentationConfig& cfg, QueryAudit& audit) {
  cfg.validate();
  int64_t kept = 0;
  const auto probe = [&](const Tensor& v) {
    audit.count.fetch_add(1, std::memory_order_relaxed);
    if (predict_label(f, v) == y) kept += 1;
  };
  for (double deg : cfg.rotation_grid) probe(augment_rotate(x, deg));
  for (const TranslationOffset& o : cfg.translation_grid) probe(augment_translate(x, o.dy, o.dx));
  return kept;
}

ShadowResult shadow_transfer_scores(const ModelHandle& f, const LabeledDataset& shadow_data,
                                    const ShadowConfig& cfg, const std::vector<PanelSample>& panel,
                                    QueryAudit& audit) {
  cfg.validate();
  check(shadow_data.size() > 0, "shadow baseline: empty shadow dataset");
  check(cfg.relabel_budget >= shadow_data.size(),
        "shadow baseline: relabel budget below shadow dataset size");

  LabeledDataset relabeled = shadow_data;
  relabeled.name = shadow_data.name + "-relabeled";
  ShadowResult out;
  for (int64_t i = 0; i < relabeled.size(); ++i) {
    relabeled.labels[static_cast<size_t>(i)] =
        predict_label(f, relabeled.images[static_cast<size_t>(i)]);
    audit.count.fetch_add(1, std::memory_order_relaxed);
    out.relabel_queries += 1;
  }
  out.shadow = train(cfg.shadow_arch, relabeled, cfg.train);
  out.scores.reserve(panel.size());
  for (const PanelSample& ps : panel)
    out.scores.push_back(class_confidence(out.shadow, ps.x, ps.y));
  return out;
}

std::vector<MembershipDecision> global_threshold_decisions(const std::vector<AdvTrace>& traces,
                                                           double threshold) {
  std::vector<MembershipDecision> out;
  out.reserve(traces.size());
  for (const AdvTrace& tr : traces) {
    MembershipDecision d;
    d.sample_id = tr.sample_id;
    d.member = tr.perturbation_linf >= threshold;
    d.shots = 1;
    out.push_back(d);
  }
  return out;
}

AdvTrace target_flip_search(const Tensor& x, int64_t y, const ModelHandle& f,
                            const SourceEnsemble& g, const AttackConfig& cfg, uint64_t seed,
                            QueryAudit& audit, const std::vector<const Tensor*>& admix_pool) {
  AdvTrace tr;
  tr.tau = -1;
  tr.queries_used = 1;
  audit.count.fetch_add(1, std::memory_order_relaxed);
  if (predict_label(f, x) != y) {  // already misclassified: boundary distance 0
    tr.x_final = x;
    tr.stop_stage = 0;
    tr.stop_iteration = 0;
    tr.exhausted = false;
    tr.perturbation_linf = 0;
    return tr;
  }
  Tensor last = x;
  int64_t last_k = cfg.K, last_i = cfg.N;
  bool flipped = false;
  walk_stages(
      x, y, g, cfg, seed,
      [&](int64_t k, int64_t i, const Tensor& xi) {
        last = xi;
        last_k = k;
        last_i = i;
        audit.count.fetch_add(1, std::memory_order_relaxed);
        tr.queries_used += 1;
        flipped = predict_label(f, xi) != y;
        return flipped;
      },
      admix_pool);
  tr.x_final = last;
  tr.stop_stage = last_k;
  tr.stop_iteration = last_i;
  tr.exhausted = !flipped;
  tr.perturbation_linf = linf_dist(last, x);
  return tr;
}

std::vector<AdvTrace> target_flip_search_panel(const std::vector<PanelSample>& panel,
                                               const ModelHandle& f, const SourceEnsemble& g,
                                               const AttackConfig& cfg, uint64_t seed,
                                               QueryAudit& audit, int jobs,
                                               const std::vector<const Tensor*>& admix_pool) {
  std::vector<AdvTrace> out(panel.size());
  parallel_for(static_cast<int64_t>(panel.size()), jobs, [&](int64_t s) {
    const PanelSample& ps = panel[static_cast<size_t>(s)];
    out[static_cast<size_t>(s)] = target_flip_search(
        ps.x, ps.y, f, g, cfg, derive_seed(seed, "attack-sample-" + std::to_string(ps.id)), audit,
        admix_pool);
    out[static_cast<size_t>(s)].sample_id = ps.id;
  });
  return out;
}

void save_scores_csv(const std::string& path, const std::vector<BaselineScoreRow>& rows) {
  std::ofstream out(path);
  if (!out.is_open()) throw std::runtime_error("scores: cannot write " + path);
  out << "sample_id,score,is_member,queries\n";
  for (const BaselineScoreRow& r : rows)
    out << r.sample_id << "," << format_double(r.score) << "," << (r.is_member ? 1 : 0) << ","
        << r.queries << "\n";
  if (!out.good()) throw std::runtime_error("scores: write failed for " + path);
}

std::vector<BaselineScoreRow> load_scores_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in.is_open()) throw std::runtime_error("scores: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "sample_id,score,is_member,queries")
    throw std::runtime_error("scores: bad header in " + path);
  std::vector<BaselineScoreRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::array<std::string, 4> cell;
    size_t pos = 0;
    for (int c = 0; c < 4; ++c) {
      size_t comma = c < 3 ? line.find(',', pos) : line.size();
      if (comma == std::string::npos) throw std::runtime_error("scores: bad row in " + path);
      cell[c] = line.substr(pos, comma - pos);
      pos = comma + 1;
    }
    BaselineScoreRow r;
    r.sample_id = std::strtoll(cell[0].c_str(), nullptr, 10);
    r.score = std::strtod(cell[1].c_str(), nullptr);
    r.is_member = cell[2] == "1";
    r.queries = std::strtoll(cell[3].c_str(), nullptr, 10);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace oslolab
