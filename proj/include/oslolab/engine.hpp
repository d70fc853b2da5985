#ifndef OSLOLAB_ENGINE_HPP
#define OSLOLAB_ENGINE_HPP

#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "oslolab/models.hpp"
#include "oslolab/transfer.hpp"

namespace oslolab {

struct AttackConfig {
  int64_t K = 80;                 // sub-procedures; stage k allows radius k*eps_max/K
  int64_t N = 10;                 // iterations per sub-procedure
  double alpha = 1.0 / 255.0;     // step size
  double eps_max = 80.0 / 255.0;  // outermost ball
  double tau = 0.1;               // validation confidence threshold
  TransferMethodParams method;
  std::string validation_rule = "all-below";  // or "mean-below"
  std::string stop_mode = "tau-threshold";    // or "label-flip"

  void validate() const;
  double stage_radius(int64_t k) const { return static_cast<double>(k) * eps_max / static_cast<double>(K); }
};

struct ValidationEnsemble {
  std::vector<const ModelHandle*> models;
  void validate() const;
};

struct AdvTrace {
  int64_t sample_id = -1;
  Tensor x_final;
  int64_t stop_stage = 0;      // 1-based k; meaningless when exhausted
  int64_t stop_iteration = 0;  // 1-based i within the stage
  bool exhausted = false;
  double tau = -1;  // threshold that produced this trace; -1 for label-flip stop
  double perturbation_linf = 0;
  std::vector<double> validation_confidences;  // per model, at the stop point
  int64_t queries_used = 0;                    // target-model calls charged to this trace
};

struct MembershipDecision {
  int64_t sample_id = -1;
  bool member = false;
  int64_t shots = 1;
};

struct PanelSample {
  int64_t id = -1;
  Tensor x;  // [C,H,W]
  int64_t y = 0;
  bool is_member = false;
};

/// Shared monotone target-query counter (the audited resource).
struct QueryAudit {
  std::atomic<int64_t> count{0};
};

/// all-below -> max over models of softmax P(y); mean-below -> mean.
/// The early stop fires when the returned value drops below tau.
double validation_confidence(const ValidationEnsemble& h, const Tensor& x, int64_t y,
                             const std::string& rule);
std::vector<double> per_model_confidences(const ValidationEnsemble& h, const Tensor& x, int64_t y);

/// The staged walk of Alg. 1: K stages, N iterations each, momentum reset per
/// stage, iterates clipped to the stage ball and the [0,1] box. The visitor
/// runs after every iterate; returning true halts the walk. The trajectory
/// never depends on the visitor (stopping rules only select points on it).
void walk_stages(const Tensor& x, int64_t y, const SourceEnsemble& g, const AttackConfig& cfg,
                 uint64_t seed,
                 const std::function<bool(int64_t k, int64_t i, const Tensor& xi)>& visit,
                 const std::vector<const Tensor*>& admix_pool = {});

/// Alg. 1 exactly: returns at the first iterate satisfying the stop rule
/// (cfg.stop_mode), else the exhausted x_K. Issues zero target queries.
AdvTrace generate_adversarial(const Tensor& x, int64_t y, const SourceEnsemble& g,
                              const ValidationEnsemble& h, const AttackConfig& cfg, uint64_t seed,
                              const std::vector<const Tensor*>& admix_pool = {});

/// One walk, many stop rules: a trace per tau (descending list) plus optional
/// label-flip trace. Bit-identical to per-tau generate_adversarial calls.
struct MultiStopRequest {
  std::vector<double> taus;  // strictly decreasing
  bool label_flip = false;
};
struct MultiStopTraces {
  std::vector<AdvTrace> tau_traces;  // parallel to request.taus
  std::optional<AdvTrace> label_flip_trace;
};
MultiStopTraces generate_adversarial_multi(const Tensor& x, int64_t y, const SourceEnsemble& g,
                                           const ValidationEnsemble& h, const AttackConfig& cfg,
                                           const MultiStopRequest& req, uint64_t seed,
                                           const std::vector<const Tensor*>& admix_pool = {});

/// Single hard-label decision: one target query per shot trace; member iff
/// the predicted label equals y on every shot. Increments audit per query and
/// stamps queries_used on each trace.
MembershipDecision infer_membership(const ModelHandle& target, int64_t y,
                                    std::vector<AdvTrace>& shot_traces, QueryAudit& audit);

struct TauPoint {
  double tau = 0;
  std::optional<double> tpr;        // null when the panel has no members
  double fpr = 0;
  std::optional<double> precision;  // null when nothing was flagged
  std::optional<double> recall;
  double flagged_fraction = 0;
};

struct SweepResult {
  std::vector<TauPoint> curve;
  // traces[t][s]: trace for tau_list[t], panel sample s (panel order)
  std::vector<std::vector<AdvTrace>> traces;
  std::optional<std::vector<AdvTrace>> label_flip_traces;
  std::vector<std::vector<MembershipDecision>> decisions;  // per tau, panel order
  int64_t queries = 0;
};

/// Full panel sweep: one walk per sample serving every tau (and optionally the
/// label-flip rule), then one query per (tau, sample). jobs = worker threads.
SweepResult sweep_tau(const std::vector<PanelSample>& panel, const ModelHandle& target,
                      const SourceEnsemble& g, const ValidationEnsemble& h,
                      const AttackConfig& cfg, const std::vector<double>& tau_list, uint64_t seed,
                      QueryAudit& audit, int jobs = 1, bool with_label_flip = false,
                      const std::vector<const Tensor*>& admix_pool = {});

inline const std::vector<double>& calibration_tau_grid() {
  static const std::vector<double> kGrid = {0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001};
  return kGrid;
}

struct CalibrationResult {
  double tau = 0;
  bool unachievable = false;  // target FPR not reachable even at the smallest grid tau
  std::vector<double> failure_rates;  // per grid tau
};

/// Largest grid tau whose transfer-failure rate (target label unchanged) on
/// known non-members stays <= target_fpr.
CalibrationResult calibrate_tau(double target_fpr, const std::vector<PanelSample>& calibration,
                                const ModelHandle& target, const SourceEnsemble& g,
                                const ValidationEnsemble& h, const AttackConfig& cfg,
                                uint64_t seed, QueryAudit& audit, int jobs = 1);

/// JSONL persistence; one record per trace, fields named as in AdvTrace.
void save_traces_jsonl(const std::string& path, const std::vector<AdvTrace>& traces);
std::vector<AdvTrace> load_traces_jsonl(const std::string& path);

int resolve_jobs(int requested);  // --jobs 0 -> OSLO_LAB_JOBS env -> hardware

// Runs fn(0..n-1) on up to `jobs` threads. Results must land in per-index
// slots so the outcome is independent of scheduling; exceptions rethrow.
void parallel_for(int64_t n, int jobs, const std::function<void(int64_t)>& fn);

}  // namespace oslolab

#endif  // OSLOLAB_ENGINE_HPP
