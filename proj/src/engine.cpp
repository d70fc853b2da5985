#include "oslolab/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

namespace oslolab {

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

void AttackConfig::validate() const {
  check(K >= 1, "attack: K must be >= 1");
  check(N >= 1, "attack: N must be >= 1");
  check(alpha > 0, "attack: alpha must be > 0");
  check(eps_max > 0 && eps_max <= 1, "attack: eps_max must be in (0,1]");
  check(tau >= 0 && tau <= 1, "attack: tau must be in [0,1]");
  check(validation_rule == "all-below" || validation_rule == "mean-below",
        "attack: unknown validation rule: " + validation_rule);
  check(stop_mode == "tau-threshold" || stop_mode == "label-flip",
        "attack: unknown stop mode: " + stop_mode);
  method.validate();
}

void ValidationEnsemble::validate() const {
  check(!models.empty(), "validation ensemble: no models");
  for (const ModelHandle* m : models) {
    check(m != nullptr, "validation ensemble: null model");
    check(m->arch.num_classes == models[0]->arch.num_classes,
          "validation ensemble: class count mismatch");
  }
}

std::vector<double> per_model_confidences(const ValidationEnsemble& h, const Tensor& x,
                                          int64_t y) {
  h.validate();
  std::vector<double> confs;
  confs.reserve(h.models.size());
  for (const ModelHandle* m : h.models) confs.push_back(class_confidence(*m, x, y));
  return confs;
}

double validation_confidence(const ValidationEnsemble& h, const Tensor& x, int64_t y,
                             const std::string& rule) {
  const std::vector<double> confs = per_model_confidences(h, x, y);
  if (rule == "all-below") return *std::max_element(confs.begin(), confs.end());
  if (rule == "mean-below") {
    double s = 0;
    for (double c : confs) s += c;
    return s / static_cast<double>(confs.size());
  }
  throw std::invalid_argument("unknown validation rule: " + rule);
}

void walk_stages(const Tensor& x, int64_t y, const SourceEnsemble& g, const AttackConfig& cfg,
                 uint64_t seed,
                 const std::function<bool(int64_t, int64_t, const Tensor&)>& visit,
                 const std::vector<const Tensor*>& admix_pool) {
  cfg.validate();
  g.validate();
  check(x.rank() == 3, "walk_stages: expected [C,H,W], got " + x.shape_str());
  for (double v : x.data) check(v >= 0 && v <= 1, "walk_stages: input outside [0,1]");
  const double mu_eff = cfg.method.mi ? cfg.method.mu : 0.0;
  Rng rng(seed);
  Tensor xk = x;
  for (int64_t k = 1; k <= cfg.K; ++k) {
    const double radius = cfg.stage_radius(k);
    Tensor xi = xk;
    Tensor mom = Tensor::zeros(x.shape);  // fresh momentum each sub-procedure
    for (int64_t i = 1; i <= cfg.N; ++i) {
      const Tensor grad = ensemble_loss_grad(g, xi, y, cfg.method, rng, admix_pool);
      mom = mi_accumulate(mom, grad, mu_eff);
      xi = fgsm_step(xi, mom, cfg.alpha);
      clamp_ball_inplace(xi, x, radius);  // ball clip preserves the box
      if (visit(k, i, xi)) return;
    }
    xk = std::move(xi);
  }
}

namespace {

AdvTrace make_trace(const Tensor& origin, const Tensor& xi, int64_t k, int64_t i, bool exhausted,
                    double tau, const std::vector<double>& confs) {
  AdvTrace tr;
  tr.x_final = xi;
  tr.stop_stage = k;
  tr.stop_iteration = i;
  tr.exhausted = exhausted;
  tr.tau = tau;
  tr.perturbation_linf = linf_dist(xi, origin);
  tr.validation_confidences = confs;
  tr.queries_used = 0;
  return tr;
}

bool all_flipped(const ValidationEnsemble& h, const Tensor& x, int64_t y) {
  for (const ModelHandle* m : h.models)
    if (predict_label(*m, x) == y) return false;
  return true;
}

}  // namespace

MultiStopTraces generate_adversarial_multi(const Tensor& x, int64_t y, const SourceEnsemble& g,
                                           const ValidationEnsemble& h, const AttackConfig& cfg,
                                           const MultiStopRequest& req, uint64_t seed,
                                           const std::vector<const Tensor*>& admix_pool) {
  h.validate();
  for (size_t t = 1; t < req.taus.size(); ++t)
    check(req.taus[t] < req.taus[t - 1], "multi-stop: taus must be strictly decreasing");
  for (double t : req.taus) check(t >= 0 && t <= 1, "multi-stop: tau outside [0,1]");
  check(!req.taus.empty() || req.label_flip, "multi-stop: nothing to record");

  MultiStopTraces out;
  out.tau_traces.resize(req.taus.size());
  size_t next_tau = 0;                      // taus descending: fire in order
  bool lf_pending = req.label_flip;
  Tensor last = x;
  int64_t last_k = cfg.K, last_i = cfg.N;

  walk_stages(
      x, y, g, cfg, seed,
      [&](int64_t k, int64_t i, const Tensor& xi) {
        last = xi;
        last_k = k;
        last_i = i;
        if (next_tau < req.taus.size()) {
          const std::vector<double> confs = per_model_confidences(h, xi, y);
          double value;
          if (cfg.validation_rule == "all-below") {
            value = *std::max_element(confs.begin(), confs.end());
          } else {
            value = 0;
            for (double c : confs) value += c;
            value /= static_cast<double>(confs.size());
          }
          while (next_tau < req.taus.size() && value < req.taus[next_tau]) {
            out.tau_traces[next_tau] = make_trace(x, xi, k, i, false, req.taus[next_tau], confs);
            ++next_tau;
          }
          if (lf_pending && all_flipped(h, xi, y)) {
            out.label_flip_trace = make_trace(x, xi, k, i, false, -1, confs);
            lf_pending = false;
          }
        } else if (lf_pending) {
          if (all_flipped(h, xi, y)) {
            out.label_flip_trace = make_trace(x, xi, k, i, false, -1,
                                              per_model_confidences(h, xi, y));
            lf_pending = false;
          }
        }
        return next_tau >= req.taus.size() && !lf_pending;
      },
      admix_pool);

  if (next_tau < req.taus.size() || lf_pending) {
    const std::vector<double> confs = per_model_confidences(h, last, y);
    for (; next_tau < req.taus.size(); ++next_tau)
      out.tau_traces[next_tau] =
          make_trace(x, last, last_k, last_i, true, req.taus[next_tau], confs);
    if (lf_pending) out.label_flip_trace = make_trace(x, last, last_k, last_i, true, -1, confs);
  }
  return out;
}

AdvTrace generate_adversarial(const Tensor& x, int64_t y, const SourceEnsemble& g,
                              const ValidationEnsemble& h, const AttackConfig& cfg, uint64_t seed,
                              const std::vector<const Tensor*>& admix_pool) {
  MultiStopRequest req;
  if (cfg.stop_mode == "label-flip") {
    req.label_flip = true;
  } else {
    req.taus = {cfg.tau};
  }
  MultiStopTraces multi = generate_adversarial_multi(x, y, g, h, cfg, req, seed, admix_pool);
  if (cfg.stop_mode == "label-flip") return std::move(*multi.label_flip_trace);
  return std::move(multi.tau_traces[0]);
}

MembershipDecision infer_membership(const ModelHandle& target, int64_t y,
                                    std::vector<AdvTrace>& shot_traces, QueryAudit& audit) {
  check(!shot_traces.empty(), "infer_membership: no shot traces");
  MembershipDecision d;
  d.sample_id = shot_traces[0].sample_id;
  d.shots = static_cast<int64_t>(shot_traces.size());
  d.member = true;
  for (AdvTrace& tr : shot_traces) {
    const int64_t pred = predict_label(target, tr.x_final);
    audit.count.fetch_add(1, std::memory_order_relaxed);
    tr.queries_used += 1;
    if (pred != y) d.member = false;  // every shot must retain the true label
  }
  return d;
}

void parallel_for(int64_t n, int jobs, const std::function<void(int64_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int64_t> cursor{0};
  std::vector<std::thread> pool;
  const int workers = static_cast<int>(std::min<int64_t>(jobs, n));
  std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (;;) {
          const int64_t i = cursor.fetch_add(1, std::memory_order_relaxed);
          if (i >= n) break;
          fn(i);
        }
      } catch (...) {
        errors[static_cast<size_t>(w)] = std::current_exception();
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
}

SweepResult sweep_tau(const std::vector<PanelSample>& panel, const ModelHandle& target,
                      const SourceEnsemble& g, const ValidationEnsemble& h,
                      const AttackConfig& cfg, const std::vector<double>& tau_list, uint64_t seed,
                      QueryAudit& audit, int jobs, bool with_label_flip,
                      const std::vector<const Tensor*>& admix_pool) {
  check(!panel.empty(), "sweep_tau: empty panel");
  check(!tau_list.empty(), "sweep_tau: empty tau list");
  const int64_t n = static_cast<int64_t>(panel.size());

  SweepResult res;
  res.traces.assign(tau_list.size(), std::vector<AdvTrace>(static_cast<size_t>(n)));
  if (with_label_flip) res.label_flip_traces = std::vector<AdvTrace>(static_cast<size_t>(n));

  parallel_for(n, jobs, [&](int64_t s) {
    const PanelSample& ps = panel[static_cast<size_t>(s)];
    MultiStopRequest req;
    req.taus = tau_list;
    req.label_flip = with_label_flip;
    MultiStopTraces multi = generate_adversarial_multi(
        ps.x, ps.y, g, h, cfg, req, derive_seed(seed, "attack-sample-" + std::to_string(ps.id)),
        admix_pool);
    for (size_t t = 0; t < tau_list.size(); ++t) {
      multi.tau_traces[t].sample_id = ps.id;
      res.traces[t][static_cast<size_t>(s)] = std::move(multi.tau_traces[t]);
    }
    if (with_label_flip) {
      multi.label_flip_trace->sample_id = ps.id;
      (*res.label_flip_traces)[static_cast<size_t>(s)] = std::move(*multi.label_flip_trace);
    }
  });

  int64_t members = 0;
  for (const PanelSample& ps : panel) members += ps.is_member ? 1 : 0;
  const int64_t nonmembers = n - members;

  res.decisions.assign(tau_list.size(), {});
  for (size_t t = 0; t < tau_list.size(); ++t) {
    int64_t tp = 0, fp = 0;
    std::vector<MembershipDecision>& dec = res.decisions[t];
    dec.reserve(static_cast<size_t>(n));
    for (int64_t s = 0; s < n; ++s) {
      std::vector<AdvTrace> shot(1);
      shot[0] = std::move(res.traces[t][static_cast<size_t>(s)]);
      MembershipDecision d = infer_membership(target, panel[static_cast<size_t>(s)].y, shot, audit);
      res.traces[t][static_cast<size_t>(s)] = std::move(shot[0]);
      if (d.member) (panel[static_cast<size_t>(s)].is_member ? tp : fp) += 1;
      dec.push_back(d);
    }
    TauPoint pt;
    pt.tau = tau_list[t];
    const int64_t flagged = tp + fp;
    if (members > 0) pt.tpr = static_cast<double>(tp) / static_cast<double>(members);
    pt.fpr = nonmembers > 0 ? static_cast<double>(fp) / static_cast<double>(nonmembers) : 0.0;
    if (flagged > 0) pt.precision = static_cast<double>(tp) / static_cast<double>(flagged);
    pt.recall = pt.tpr;
    pt.flagged_fraction = static_cast<double>(flagged) / static_cast<double>(n);
    res.curve.push_back(pt);
  }
  res.queries = static_cast<int64_t>(tau_list.size()) * n;
  return res;
}

CalibrationResult calibrate_tau(double target_fpr, const std::vector<PanelSample>& calibration,
                                const ModelHandle& target, const SourceEnsemble& g,
                                const ValidationEnsemble& h, const AttackConfig& cfg,
                                uint64_t seed, QueryAudit& audit, int jobs) {
  check(target_fpr >= 0 && target_fpr <= 1, "calibrate_tau: target_fpr in [0,1]");
  check(!calibration.empty(), "calibrate_tau: empty calibration set");
  for (const PanelSample& ps : calibration)
    check(!ps.is_member, "calibrate_tau: calibration set must hold non-members only");

  const std::vector<double>& grid = calibration_tau_grid();
  SweepResult sweep = sweep_tau(calibration, target, g, h, cfg, grid, seed, audit, jobs);
  CalibrationResult out;
  out.tau = grid.back();
  out.unachievable = true;
  for (size_t t = 0; t < grid.size(); ++t) {
    // transfer failure = target label unchanged = flagged non-member
    const double rate = sweep.curve[t].fpr;
    out.failure_rates.push_back(rate);
    if (out.unachievable && rate <= target_fpr) {  // grid descends: first hit is largest tau
      out.tau = grid[t];
      out.unachievable = false;
    }
  }
  return out;
}

namespace {

nlohmann::json tensor_to_json(const Tensor& t) {
  return nlohmann::json{{"shape", t.shape}, {"data", t.data}};
}

Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("shape").get<std::vector<int64_t>>(), j.at("data").get<std::vector<double>>());
}

}  // namespace

void save_traces_jsonl(const std::string& path, const std::vector<AdvTrace>& traces) {
  std::ofstream out(path);
  check(out.is_open(), "traces: cannot write " + path);
  for (const AdvTrace& tr : traces) {
    nlohmann::json j;
    j["sample-id"] = tr.sample_id;
    j["x-final"] = tensor_to_json(tr.x_final);
    j["stop-stage"] = tr.stop_stage;
    j["stop-iteration"] = tr.stop_iteration;
    j["exhausted"] = tr.exhausted;
    j["tau"] = tr.tau;
    j["perturbation-linf"] = tr.perturbation_linf;
    j["validation-confidences"] = tr.validation_confidences;
    j["queries-used"] = tr.queries_used;
    out << j.dump() << "\n";
  }
  check(out.good(), "traces: write failed for " + path);
}

std::vector<AdvTrace> load_traces_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in.is_open()) throw std::runtime_error("traces: cannot open " + path);
  std::vector<AdvTrace> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    AdvTrace tr;
    tr.sample_id = j.at("sample-id").get<int64_t>();
    tr.x_final = tensor_from_json(j.at("x-final"));
    tr.stop_stage = j.at("stop-stage").get<int64_t>();
    tr.stop_iteration = j.at("stop-iteration").get<int64_t>();
    tr.exhausted = j.at("exhausted").get<bool>();
    tr.tau = j.at("tau").get<double>();
    tr.perturbation_linf = j.at("perturbation-linf").get<double>();
    tr.validation_confidences = j.at("validation-confidences").get<std::vector<double>>();
    tr.queries_used = j.at("queries-used").get<int64_t>();
    out.push_back(std::move(tr));
  }
  return out;
}

int resolve_jobs(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("OSLO_LAB_JOBS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

}  // namespace oslolab
