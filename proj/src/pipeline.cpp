#include "oslolab/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "oslolab/analysis.hpp"
#include "oslolab/baselines.hpp"
#include "oslolab/defenses.hpp"
#include "oslolab/metrics.hpp"
#include "oslolab/tensor.hpp"

namespace oslolab {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace paths {

std::string tau_traces(double tau) { return "attack/traces-tau-" + format_double(tau) + ".jsonl"; }
std::string baseline_scores(const std::string& b) { return "baselines/" + b + ".csv"; }

}  // namespace paths

// --- file helpers -----------------------------------------------------------

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out.good()) throw std::runtime_error("write failed for " + path);
}

uint64_t file_fnv(const std::string& path) { return fnv1a64(read_text_file(path)); }

namespace {

std::string at(const ExperimentConfig& cfg, const std::string& rel) {
  return (fs::path(cfg.out_dir) / rel).string();
}

void require_artifact(const ExperimentConfig& cfg, const std::string& rel, const std::string& producer) {
  if (!fs::exists(at(cfg, rel)))
    throw std::runtime_error("missing artifact " + rel + " (run '" + producer + "' first)");
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void note(bool quiet, const std::string& msg) {
  if (!quiet) std::cout << msg << "\n";
}

// manifest.json: config hash, per-stage wall seconds and artifact checksums.
// Wall-clock lives here only -- summary.json stays byte-deterministic.
void record_stage(const ExperimentConfig& cfg, const std::string& stage, double seconds,
                  const std::vector<std::string>& artifacts) {
  json m;
  std::string mpath = at(cfg, paths::kManifest);
  if (fs::exists(mpath)) m = json::parse(read_text_file(mpath));
  m["config-hash"] = hex64(config_hash(cfg));
  m["seed"] = cfg.seed;
  json st;
  st["wall-seconds"] = seconds;
  json arts = json::object();
  for (const std::string& rel : artifacts)
    if (fs::exists(at(cfg, rel))) arts[rel] = hex64(file_fnv(at(cfg, rel)));
  st["artifacts"] = arts;
  m["stages"][stage] = st;
  write_text_file(mpath, m.dump(2) + "\n");
}

struct StageClock {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

// --- shared loading ---------------------------------------------------------

LabeledDataset load_data(const ExperimentConfig& cfg) {
  LabeledDataset d = load_idx_dataset(at(cfg, paths::kImages), at(cfg, paths::kLabels));
  d.num_classes = cfg.dataset.classes;
  d.name = "synth";
  return d;
}

SplitPlan load_split(const ExperimentConfig& cfg) {
  return SplitPlan::from_json(read_text_file(at(cfg, paths::kSplits)));
}

ArchSpec make_arch(const ExperimentConfig& cfg, const std::string& family, double dropout = 0.0) {
  ArchSpec a;
  a.family = family;
  a.dropout_rate = dropout;
  a.input_c = 1;
  a.input_h = cfg.dataset.height;
  a.input_w = cfg.dataset.width;
  a.num_classes = cfg.dataset.classes;
  return a;
}

std::string source_path(const std::string& family, int64_t i) {
  return "models/source-" + family + "-" + std::to_string(i) + ".bin";
}
std::string validation_path(const std::string& family, int64_t i) {
  return "models/validation-" + family + "-" + std::to_string(i) + ".bin";
}

struct LoadedModels {
  ModelHandle target;
  std::vector<ModelHandle> sources, validations;
  SourceEnsemble g;
  ValidationEnsemble h;
};

LoadedModels load_models(const ExperimentConfig& cfg) {
  require_artifact(cfg, paths::kTargetModel, "train");
  LoadedModels lm;
  lm.target = load_model(at(cfg, paths::kTargetModel));
  for (const std::string& f : cfg.sources.families)
    for (int64_t i = 0; i < cfg.sources.count; ++i)
      lm.sources.push_back(load_model(at(cfg, source_path(f, i))));
  for (const std::string& f : cfg.validation.families)
    for (int64_t i = 0; i < cfg.validation.count; ++i)
      lm.validations.push_back(load_model(at(cfg, validation_path(f, i))));
  for (const ModelHandle& m : lm.sources) lm.g.models.push_back(&m);
  for (const ModelHandle& m : lm.validations) lm.h.models.push_back(&m);
  return lm;
}

std::vector<PanelSample> eval_panel(const ExperimentConfig& cfg, const LabeledDataset& d,
                                    const SplitPlan& split) {
  return build_panel(d, split.eval_members, split.eval_nonmembers, cfg.split.eval_members,
                     cfg.split.eval_nonmembers);
}

AttackConfig attack_config(const ExperimentConfig& cfg) { return cfg.attack; }

// Reconstructs the sweep archive written by the attack stage.
SweepResult load_sweep(const ExperimentConfig& cfg) {
  require_artifact(cfg, paths::kCurve, "attack oslo");
  SweepResult sr;
  std::string text = read_text_file(at(cfg, paths::kCurve));
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != "tau,tpr,fpr,precision,recall,flagged_fraction")
    throw std::runtime_error("bad curve header in " + std::string(paths::kCurve));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    size_t pos = 0;
    while (true) {
      size_t comma = line.find(',', pos);
      cells.push_back(line.substr(pos, comma == std::string::npos ? comma : comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (cells.size() != 6) throw std::runtime_error("bad curve row: " + line);
    auto opt = [](const std::string& s) -> std::optional<double> {
      if (s.empty()) return std::nullopt;
      return std::strtod(s.c_str(), nullptr);
    };
    TauPoint p;
    p.tau = std::strtod(cells[0].c_str(), nullptr);
    p.tpr = opt(cells[1]);
    p.fpr = std::strtod(cells[2].c_str(), nullptr);
    p.precision = opt(cells[3]);
    p.recall = opt(cells[4]);
    p.flagged_fraction = std::strtod(cells[5].c_str(), nullptr);
    sr.curve.push_back(p);
  }
  for (const TauPoint& p : sr.curve)
    sr.traces.push_back(load_traces_jsonl(at(cfg, paths::tau_traces(p.tau))));
  if (fs::exists(at(cfg, paths::kLabelFlipTraces)))
    sr.label_flip_traces = load_traces_jsonl(at(cfg, paths::kLabelFlipTraces));
  json q = json::parse(read_text_file(at(cfg, paths::kAttackQueries)));
  sr.queries = q.at("sweep").get<int64_t>();
  return sr;
}

std::string curve_csv(const std::vector<TauPoint>& curve) {
  std::string out = "tau,tpr,fpr,precision,recall,flagged_fraction\n";
  auto cell = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  for (const TauPoint& p : curve) {
    out += format_double(p.tau) + "," + cell(p.tpr) + "," + format_double(p.fpr) + "," +
           cell(p.precision) + "," + cell(p.recall) + "," + format_double(p.flagged_fraction) + "\n";
  }
  return out;
}

}  // namespace

// --- shared helpers ----------------------------------------------------------

std::vector<PanelSample> build_panel(const LabeledDataset& data,
                                     const std::vector<int64_t>& members,
                                     const std::vector<int64_t>& nonmembers, int64_t member_count,
                                     int64_t nonmember_count) {
  if (member_count < 0) member_count = static_cast<int64_t>(members.size());
  if (nonmember_count < 0) nonmember_count = static_cast<int64_t>(nonmembers.size());
  if (member_count > static_cast<int64_t>(members.size()) ||
      nonmember_count > static_cast<int64_t>(nonmembers.size()))
    throw std::runtime_error("panel request exceeds the available split");
  std::vector<PanelSample> panel;
  panel.reserve(member_count + nonmember_count);
  auto push = [&](int64_t idx, bool member) {
    PanelSample s;
    s.id = idx;
    s.x = data.images.at(idx);
    s.y = data.labels.at(idx);
    s.is_member = member;
    panel.push_back(std::move(s));
  };
  for (int64_t i = 0; i < member_count; ++i) push(members[i], true);
  for (int64_t i = 0; i < nonmember_count; ++i) push(nonmembers[i], false);
  return panel;
}

std::vector<int64_t> calibration_indices(const ExperimentConfig& cfg, const LabeledDataset& data,
                                         const SplitPlan& split) {
  std::set<int64_t> used;
  used.insert(split.target_train.begin(), split.target_train.end());
  used.insert(split.surrogate_train.begin(), split.surrogate_train.end());
  used.insert(split.eval_nonmembers.begin(), split.eval_nonmembers.end());
  std::vector<int64_t> free;
  for (int64_t i = 0; i < data.size(); ++i)
    if (!used.count(i)) free.push_back(i);
  if (static_cast<int64_t>(free.size()) < cfg.split.calibration)
    throw std::runtime_error("not enough unused samples for the calibration pool");
  Rng rng(derive_seed(cfg.seed, "calibration"));
  std::vector<int64_t> perm = rng.permutation(static_cast<int64_t>(free.size()));
  std::vector<int64_t> out;
  for (int64_t i = 0; i < cfg.split.calibration; ++i) out.push_back(free[perm[i]]);
  std::sort(out.begin(), out.end());
  return out;
}

// --- stages -------------------------------------------------------------------

void stage_gen_data(const ExperimentConfig& cfg, bool quiet) {
  StageClock clock;
  LabeledDataset d = synth_dataset(cfg.dataset, derive_seed(cfg.seed, "dataset"));
  SplitSizes sizes;
  sizes.target_train = cfg.split.target_train;
  sizes.surrogate_train = cfg.split.surrogate;
  sizes.eval_per_side = std::max(cfg.split.eval_members, cfg.split.eval_nonmembers);
  // eval-members is drawn from target_train, eval-nonmembers from the held-out
  // pool; the plan stores the larger side and panels truncate.
  SplitPlan split = make_split(d, sizes, derive_seed(cfg.seed, "split"));
  fs::create_directories(fs::path(cfg.out_dir) / "data");
  save_idx_dataset(d, at(cfg, paths::kImages), at(cfg, paths::kLabels));
  write_text_file(at(cfg, paths::kSplits), split.to_json());
  json cal = calibration_indices(cfg, d, split);
  write_text_file(at(cfg, paths::kCalibrationIds), cal.dump() + "\n");
  write_text_file(at(cfg, paths::kConfig), dump_config(cfg));
  record_stage(cfg, "gen-data", clock.seconds(),
               {paths::kImages, paths::kLabels, paths::kSplits, paths::kCalibrationIds});
  note(quiet, "gen-data: " + std::to_string(d.size()) + " samples, split " +
                  std::to_string(split.target_train.size()) + "/" +
                  std::to_string(split.surrogate_train.size()) + ", calibration pool " +
                  std::to_string(cal.size()));
}

void stage_train(const ExperimentConfig& cfg, bool quiet) {
  require_artifact(cfg, paths::kImages, "gen-data");
  StageClock clock;
  LabeledDataset d = load_data(cfg);
  SplitPlan split = load_split(cfg);

  struct JobSpec {
    std::string rel;
    ArchSpec arch;
    TrainConfig train;
    const std::vector<int64_t>* subset;
  };
  std::vector<JobSpec> jobs_list;
  {
    TrainConfig t = cfg.target_train;
    t.seed = derive_seed(cfg.seed, "train-target");
    jobs_list.push_back({paths::kTargetModel,
                         make_arch(cfg, cfg.target_arch.family, cfg.target_arch.dropout_rate), t,
                         &split.target_train});
  }
  for (const std::string& f : cfg.sources.families)
    for (int64_t i = 0; i < cfg.sources.count; ++i) {
      TrainConfig t = cfg.sources.train;
      t.seed = derive_seed(cfg.seed, "train-source-" + f + "-" + std::to_string(i));
      jobs_list.push_back({source_path(f, i), make_arch(cfg, f), t, &split.surrogate_train});
    }
  for (const std::string& f : cfg.validation.families)
    for (int64_t i = 0; i < cfg.validation.count; ++i) {
      TrainConfig t = cfg.validation.train;
      t.seed = derive_seed(cfg.seed, "train-validation-" + f + "-" + std::to_string(i));
      jobs_list.push_back({validation_path(f, i), make_arch(cfg, f), t, &split.surrogate_train});
    }

  fs::create_directories(fs::path(cfg.out_dir) / "models");
  const int jobs = resolve_jobs(cfg.jobs);
  std::vector<ModelHandle> trained(jobs_list.size());
  parallel_for(static_cast<int64_t>(jobs_list.size()), jobs, [&](int64_t i) {
    const JobSpec& spec = jobs_list[i];
    trained[i] = train(spec.arch, d, *spec.subset, spec.train);
  });

  json stats = json::object();
  std::vector<std::string> artifacts;
  for (size_t i = 0; i < jobs_list.size(); ++i) {
    const JobSpec& spec = jobs_list[i];
    save_model(trained[i], at(cfg, spec.rel));
    artifacts.push_back(spec.rel);
    const std::vector<int64_t>& train_idx = *spec.subset;
    json s;
    s["family"] = spec.arch.family;
    s["train-accuracy"] = accuracy(trained[i], d, train_idx);
    s["test-accuracy"] = accuracy(trained[i], d, split.eval_nonmembers);
    std::string key = fs::path(spec.rel).stem().string();
    stats[key] = s;
    note(quiet, "train: " + key + " (" + spec.arch.family + ") train " +
                    format_double(s["train-accuracy"].get<double>()) + " test " +
                    format_double(s["test-accuracy"].get<double>()));
  }
  write_text_file(at(cfg, paths::kModelStats), stats.dump(2) + "\n");
  artifacts.push_back(paths::kModelStats);
  record_stage(cfg, "train", clock.seconds(), artifacts);
}

void stage_attack_oslo(const ExperimentConfig& cfg, bool quiet) {
  require_artifact(cfg, paths::kImages, "gen-data");
  require_artifact(cfg, paths::kTargetModel, "train");
  StageClock clock;
  LabeledDataset d = load_data(cfg);
  SplitPlan split = load_split(cfg);
  LoadedModels lm = load_models(cfg);
  std::vector<PanelSample> panel = eval_panel(cfg, d, split);
  const int jobs = resolve_jobs(cfg.jobs);

  QueryAudit audit;
  SweepResult sweep = sweep_tau(panel, lm.target, lm.g, lm.h, attack_config(cfg), cfg.tau_list,
                                cfg.seed, audit, jobs, /*with_label_flip=*/true);
  const int64_t sweep_queries = audit.count.load();

  fs::create_directories(fs::path(cfg.out_dir) / "attack");
  std::vector<std::string> artifacts = {paths::kCurve, paths::kAttackQueries};
  write_text_file(at(cfg, paths::kCurve), curve_csv(sweep.curve));
  for (size_t t = 0; t < cfg.tau_list.size(); ++t) {
    save_traces_jsonl(at(cfg, paths::tau_traces(cfg.tau_list[t])), sweep.traces[t]);
    artifacts.push_back(paths::tau_traces(cfg.tau_list[t]));
  }
  save_traces_jsonl(at(cfg, paths::kLabelFlipTraces), *sweep.label_flip_traces);
  artifacts.push_back(paths::kLabelFlipTraces);

  // Calibration: transfer-failure rates on held-out non-members.
  json caljson;
  int64_t calibration_queries = 0;
  if (cfg.split.calibration > 0) {
    json ids = json::parse(read_text_file(at(cfg, paths::kCalibrationIds)));
    std::vector<int64_t> cal_idx = ids.get<std::vector<int64_t>>();
    std::vector<PanelSample> cal_panel = build_panel(d, {}, cal_idx);
    QueryAudit cal_audit;
    CalibrationResult cal = calibrate_tau(0.01, cal_panel, lm.target, lm.g, lm.h,
                                          attack_config(cfg), cfg.seed, cal_audit, jobs);
    calibration_queries = cal_audit.count.load();
    caljson["target-fpr"] = 0.01;
    caljson["tau"] = cal.tau;
    caljson["unachievable"] = cal.unachievable;
    caljson["grid"] = calibration_tau_grid();
    caljson["failure-rates"] = cal.failure_rates;
    write_text_file(at(cfg, paths::kCalibration), caljson.dump(2) + "\n");
    artifacts.push_back(paths::kCalibration);
    note(quiet, "attack oslo: calibrated tau " + format_double(cal.tau) + " at target fpr 0.01");
  }

  json q;
  q["sweep"] = sweep_queries;
  q["calibration"] = calibration_queries;
  write_text_file(at(cfg, paths::kAttackQueries), q.dump(2) + "\n");
  record_stage(cfg, "attack-oslo", clock.seconds(), artifacts);
  note(quiet, "attack oslo: " + std::to_string(panel.size()) + " samples x " +
                  std::to_string(cfg.tau_list.size()) + " taus, " + std::to_string(sweep_queries) +
                  " target queries");
}

void stage_attack_baseline(const ExperimentConfig& cfg, const std::string& name, bool quiet) {
  require_artifact(cfg, paths::kImages, "gen-data");
  require_artifact(cfg, paths::kTargetModel, "train");
  StageClock clock;
  LabeledDataset d = load_data(cfg);
  SplitPlan split = load_split(cfg);
  std::vector<PanelSample> panel = eval_panel(cfg, d, split);
  const int jobs = resolve_jobs(cfg.jobs);
  ModelHandle target = load_model(at(cfg, paths::kTargetModel));

  fs::create_directories(fs::path(cfg.out_dir) / "baselines");
  std::vector<BaselineScoreRow> rows(panel.size());
  QueryAudit audit;
  std::vector<std::string> artifacts = {paths::baseline_scores(name)};

  if (name == "gaussian") {
    parallel_for(static_cast<int64_t>(panel.size()), jobs, [&](int64_t i) {
      const PanelSample& s = panel[i];
      GaussianScore g = gaussian_boundary_score(
          target, s.x, s.y, cfg.baselines.gaussian,
          derive_seed(cfg.seed, "gaussian-sample-" + std::to_string(s.id)), audit);
      rows[i] = {s.id, g.score, s.is_member, g.queries};
    });
  } else if (name == "augmentation") {
    parallel_for(static_cast<int64_t>(panel.size()), jobs, [&](int64_t i) {
      const PanelSample& s = panel[i];
      int64_t kept = augmentation_attack_score(target, s.x, s.y, cfg.baselines.augmentation, audit);
      rows[i] = {s.id, static_cast<double>(kept), s.is_member,
                 cfg.baselines.augmentation.grid_size()};
    });
  } else if (name == "shadow") {
    LabeledDataset shadow_data;
    shadow_data.num_classes = d.num_classes;
    shadow_data.name = "shadow";
    for (int64_t idx : split.surrogate_train) {
      shadow_data.images.push_back(d.images[idx]);
      shadow_data.labels.push_back(d.labels[idx]);
    }
    ShadowConfig sc;
    sc.shadow_arch = make_arch(cfg, cfg.baselines.shadow_family);
    sc.train = cfg.baselines.shadow_train;
    sc.train.seed = derive_seed(cfg.seed, "train-shadow");
    sc.relabel_budget = shadow_data.size();
    ShadowResult res = shadow_transfer_scores(target, shadow_data, sc, panel, audit);
    // relabeling cost is charged to the first row; per-sample scoring is free
    for (size_t i = 0; i < panel.size(); ++i)
      rows[i] = {panel[i].id, res.scores[i], panel[i].is_member,
                 i == 0 ? res.relabel_queries : 0};
  } else if (name == "global-threshold") {
    LoadedModels lm = load_models(cfg);
    std::vector<AdvTrace> flips =
        target_flip_search_panel(panel, lm.target, lm.g, attack_config(cfg), cfg.seed, audit, jobs);
    save_traces_jsonl(at(cfg, paths::kFlipSearch), flips);
    artifacts.push_back(paths::kFlipSearch);
    for (size_t i = 0; i < panel.size(); ++i)
      rows[i] = {panel[i].id, flips[i].perturbation_linf, panel[i].is_member,
                 flips[i].queries_used};
  } else {
    throw std::runtime_error("unknown baseline: " + name);
  }

  save_scores_csv(at(cfg, paths::baseline_scores(name)), rows);
  record_stage(cfg, "attack-baseline-" + name, clock.seconds(), artifacts);
  note(quiet, "attack baseline " + name + ": " + std::to_string(panel.size()) + " samples, " +
                  std::to_string(audit.count.load()) + " target queries");
}

void stage_defend(const ExperimentConfig& cfg, bool quiet) {
  require_artifact(cfg, paths::kImages, "gen-data");
  require_artifact(cfg, paths::kCurve, "attack oslo");
  StageClock clock;
  LabeledDataset d = load_data(cfg);
  SplitPlan split = load_split(cfg);
  const int jobs = resolve_jobs(cfg.jobs);

  // Defended targets share the undefended sweep's trajectories (walks depend
  // only on the surrogates), so membership is re-decided from the archived
  // traces with fresh queries against each defended model.
  SweepResult sweep = load_sweep(cfg);
  std::vector<PanelSample> panel = eval_panel(cfg, d, split);
  std::vector<PanelSample> def_panel =
      build_panel(d, split.eval_members, split.eval_nonmembers, cfg.defense.panel_members,
                  cfg.defense.panel_nonmembers);
  std::set<int64_t> keep;
  for (const PanelSample& s : def_panel) keep.insert(s.id);

  std::string csv = "defense,param,test_acc,tpr_at_1pct_fpr\n";
  json norms = json::object();
  struct GridJob {
    std::string kind;
    double value;
  };
  std::vector<GridJob> grid_jobs;
  for (const std::string& kind : cfg.defense.kinds)
    for (double v : defense_grid(kind)) grid_jobs.push_back({kind, v});

  std::vector<DefendedModel> defended(grid_jobs.size());
  parallel_for(static_cast<int64_t>(grid_jobs.size()), jobs, [&](int64_t i) {
    const GridJob& gj = grid_jobs[i];
    DefenseConfig def;
    def.kind = gj.kind;
    ArchSpec arch = make_arch(cfg, cfg.target_arch.family, cfg.target_arch.dropout_rate);
    if (gj.kind == "l2") def.l2_lambda = gj.value;
    if (gj.kind == "l1") def.l1_lambda = gj.value;
    if (gj.kind == "dropout") def.dropout_rate = gj.value;
    if (gj.kind == "dpsgd") {
      def.dpsgd.noise_multiplier = gj.value;
      arch = make_arch(cfg, cfg.defense.dpsgd_family);
    }
    TrainConfig t = cfg.defense.train;
    t.seed = derive_seed(cfg.seed, "train-defended-" + gj.kind + "-" + format_double(gj.value));
    defended[i] = train_defended(arch, d, split.target_train, t, def);
  });

  for (size_t i = 0; i < grid_jobs.size(); ++i) {
    const GridJob& gj = grid_jobs[i];
    DefendedModel& dm = defended[i];
    double test_acc = accuracy(dm.model, d, split.eval_nonmembers);
    // rates per tau over the defense panel, against this defended target
    double best_tpr = 0.0;
    for (size_t t = 0; t < sweep.traces.size(); ++t) {
      int64_t tp = 0, fp = 0, pos = 0, neg = 0;
      QueryAudit audit;
      for (size_t s = 0; s < panel.size(); ++s) {
        if (!keep.count(panel[s].id)) continue;
        std::vector<AdvTrace> shot = {sweep.traces[t][s]};
        MembershipDecision dec = infer_membership(dm.model, panel[s].y, shot, audit);
        if (panel[s].is_member) {
          ++pos;
          if (dec.member) ++tp;
        } else {
          ++neg;
          if (dec.member) ++fp;
        }
      }
      double fpr = neg ? static_cast<double>(fp) / neg : 0.0;
      double tpr = pos ? static_cast<double>(tp) / pos : 0.0;
      if (fpr <= 0.01) best_tpr = std::max(best_tpr, tpr);
    }
    csv += gj.kind + "," + format_double(gj.value) + "," + format_double(test_acc) + "," +
           format_double(best_tpr) + "\n";
    if (gj.kind == "dpsgd") {
      double max_norm = 0.0;
      for (double n : dm.dpsgd_post_clip_norms) max_norm = std::max(max_norm, n);
      json entry;
      entry["count"] = dm.dpsgd_post_clip_norms.size();
      entry["max"] = max_norm;
      entry["clip-bound"] = DpsgdConfig{}.clip_bound;
      norms[format_double(gj.value)] = entry;
    }
    note(quiet, "defend: " + gj.kind + " " + format_double(gj.value) + " test acc " +
                    format_double(test_acc) + " tpr@1%fpr " + format_double(best_tpr));
  }

  write_text_file(at(cfg, paths::kDefenseCsv), csv);
  std::vector<std::string> artifacts = {paths::kDefenseCsv};
  if (!norms.empty()) {
    write_text_file(at(cfg, paths::kDefenseNorms), norms.dump(2) + "\n");
    artifacts.push_back(paths::kDefenseNorms);
  }
  record_stage(cfg, "defend", clock.seconds(), artifacts);
}

namespace {

json metric_block(std::optional<double> tpr0001, std::optional<double> tpr001,
                  std::optional<double> max_prec, int64_t queries) {
  json b;
  b["tpr_at_fpr_0001"] = tpr0001 ? json(*tpr0001) : json(nullptr);
  b["tpr_at_fpr_001"] = tpr001 ? json(*tpr001) : json(nullptr);
  b["max_precision_recall_ge_001"] = max_prec ? json(*max_prec) : json(nullptr);
  b["queries"] = queries;
  return b;
}

// Operating-point metrics over the tau curve (curve rows are the only
// observable points of the label-only attack).
json oslo_metrics(const SweepResult& sweep) {
  double t0001 = 0.0, t001 = 0.0;
  std::optional<double> max_prec;
  for (const TauPoint& p : sweep.curve) {
    double tpr = p.tpr.value_or(0.0);
    if (p.fpr <= 0.001) t0001 = std::max(t0001, tpr);
    if (p.fpr <= 0.01) t001 = std::max(t001, tpr);
    if (p.precision && p.recall && *p.recall >= 0.01)
      max_prec = std::max(max_prec.value_or(0.0), *p.precision);
  }
  return metric_block(t0001, t001, max_prec, sweep.queries);
}

json scored_metrics(const std::vector<BaselineScoreRow>& rows) {
  ScoredPanel panel;
  int64_t queries = 0;
  for (const BaselineScoreRow& r : rows) {
    panel.entries.push_back({r.score, r.is_member});
    queries += r.queries;
  }
  std::optional<double> max_prec;
  for (const RocPoint& p : roc_points(panel))
    if (p.precision && p.recall >= 0.01) max_prec = std::max(max_prec.value_or(0.0), *p.precision);
  return metric_block(tpr_at_fpr(panel, 0.001), tpr_at_fpr(panel, 0.01), max_prec, queries);
}

}  // namespace

void stage_evaluate(const ExperimentConfig& cfg, bool quiet) {
  require_artifact(cfg, paths::kCurve, "attack oslo");
  StageClock clock;
  LabeledDataset d = load_data(cfg);
  SplitPlan split = load_split(cfg);
  LoadedModels lm = load_models(cfg);
  std::vector<PanelSample> panel = eval_panel(cfg, d, split);
  SweepResult sweep = load_sweep(cfg);
  const int jobs = resolve_jobs(cfg.jobs);
  fs::create_directories(fs::path(cfg.out_dir) / "analysis");
  std::vector<std::string> artifacts;

  // stop-rule comparison (fresh decisions for the label-flip archive)
  {
    QueryAudit audit;
    std::vector<StopModeRow> rows = stop_mode_comparison(sweep, panel, lm.target, audit);
    std::string csv = "mode,tau,tpr,fpr\n";
    for (const StopModeRow& r : rows)
      csv += r.mode + "," + (r.tau < 0 ? std::string() : format_double(r.tau)) + "," +
             (r.tpr ? format_double(*r.tpr) : std::string()) + "," + format_double(r.fpr) + "\n";
    write_text_file(at(cfg, paths::kStopModesCsv), csv);
    artifacts.push_back(paths::kStopModesCsv);
  }

  // multi-shot refinement
  {
    QueryAudit audit;
    std::vector<ShotPoint> pts = multishot_study(sweep, panel, lm.target, cfg.analysis.shots, audit);
    std::string csv = "shots,precision,recall,queries\n";
    for (const ShotPoint& p : pts)
      csv += std::to_string(p.shots) + "," + (p.precision ? format_double(*p.precision) : std::string()) +
             "," + (p.recall ? format_double(*p.recall) : std::string()) + "," +
             std::to_string(p.queries) + "\n";
    write_text_file(at(cfg, paths::kMultishotCsv), csv);
    artifacts.push_back(paths::kMultishotCsv);
  }

  // matched-flagged-fraction precision comparison vs the global threshold
  if (fs::exists(at(cfg, paths::kFlipSearch))) {
    std::vector<AdvTrace> flips = load_traces_jsonl(at(cfg, paths::kFlipSearch));
    ComparisonReport rep =
        matched_fraction_comparison(sweep, panel, flips, cfg.analysis.matched_fraction);
    save_comparison_csv(at(cfg, paths::kComparisonCsv), rep);
    write_text_file(at(cfg, paths::kComparisonMd), comparison_markdown(rep));
    artifacts.push_back(paths::kComparisonCsv);
    artifacts.push_back(paths::kComparisonMd);
  }

  // uniform-budget ablation: grid calibrated from the archived non-member
  // label-flip radii, fresh exhaustion walks without any validation models
  {
    std::vector<AdvTrace> nm_flips;
    for (size_t i = 0; i < panel.size(); ++i)
      if (!panel[i].is_member) nm_flips.push_back((*sweep.label_flip_traces)[i]);
    std::vector<double> eps_grid = calibrate_epsilon_grid(nm_flips, cfg.analysis.epsilon_cover);
    std::vector<PanelSample> ab_panel =
        build_panel(d, split.eval_members, split.eval_nonmembers, cfg.analysis.ablation_members,
                    cfg.analysis.ablation_nonmembers);
    QueryAudit audit;
    std::vector<BudgetPoint> pts = uniform_budget_ablation(ab_panel, lm.target, lm.g,
                                                           attack_config(cfg), eps_grid,
                                                           cfg.seed, audit, jobs);
    std::string csv = "eps,tpr,fpr\n";
    for (const BudgetPoint& p : pts)
      csv += format_double(p.eps) + "," + (p.tpr ? format_double(*p.tpr) : std::string()) + "," +
             format_double(p.fpr) + "\n";
    write_text_file(at(cfg, paths::kBudgetCsv), csv);
    artifacts.push_back(paths::kBudgetCsv);
  }

  // summary.json -- fully deterministic (work counters, no wall clock)
  json summary;
  summary["config_hash"] = hex64(config_hash(cfg));
  json metrics = json::object();
  metrics["oslo"] = oslo_metrics(sweep);
  for (const std::string& b : cfg.baselines.enabled) {
    std::string p = at(cfg, paths::baseline_scores(b));
    if (fs::exists(p)) metrics[b] = scored_metrics(load_scores_csv(p));
  }
  summary["metrics"] = metrics;
  json timings = json::object();
  timings["train"] = json{{"models", 1 + cfg.sources.count * cfg.sources.families.size() +
                                         cfg.validation.count * cfg.validation.families.size()}};
  timings["attack-oslo"] =
      json{{"samples", panel.size()}, {"taus", cfg.tau_list.size()}, {"target-queries", sweep.queries}};
  json bt = json::object();
  for (const std::string& b : cfg.baselines.enabled) {
    std::string p = at(cfg, paths::baseline_scores(b));
    if (!fs::exists(p)) continue;
    int64_t q = 0;
    for (const BaselineScoreRow& r : load_scores_csv(p)) q += r.queries;
    bt[b] = json{{"target-queries", q}};
  }
  timings["baselines"] = bt;
  summary["timings"] = timings;
  write_text_file(at(cfg, paths::kSummary), summary.dump(2) + "\n");
  artifacts.push_back(paths::kSummary);
  record_stage(cfg, "evaluate", clock.seconds(), artifacts);
  note(quiet, "evaluate: wrote " + std::string(paths::kSummary));
}

// --- report -------------------------------------------------------------------

std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<ChartSeries>& series,
                           bool log_x) {
  const double W = 640, H = 420, L = 64, R = 24, T = 40, B = 48;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  auto tx = [&](double x) { return log_x ? std::log10(std::max(x, 1e-12)) : x; };
  for (const ChartSeries& s : series)
    for (auto [x, y] : s.points) {
      xmin = std::min(xmin, tx(x));
      xmax = std::max(xmax, tx(x));
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
  }
  if (ymin > ymax) {
    ymin = 0;
    ymax = 1;
  }
  if (xmax - xmin < 1e-12) xmax = xmin + 1;
  if (ymax - ymin < 1e-12) ymax = ymin + 1;
  auto px = [&](double x) { return L + (tx(x) - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " +
                    format_double(W) + " " + format_double(H) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + format_double(W / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" "
         "font-family=\"sans-serif\">" + title + "</text>\n";
  // axes
  svg += "<line x1=\"" + format_double(L) + "\" y1=\"" + format_double(H - B) + "\" x2=\"" +
         format_double(W - R) + "\" y2=\"" + format_double(H - B) + "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + format_double(L) + "\" y1=\"" + format_double(T) + "\" x2=\"" +
         format_double(L) + "\" y2=\"" + format_double(H - B) + "\" stroke=\"black\"/>\n";
  // gridlines + tick labels
  auto xtick = [&](double v, const std::string& label) {
    double x = L + (v - xmin) / (xmax - xmin) * (W - L - R);
    svg += "<line x1=\"" + format_double(x) + "\" y1=\"" + format_double(T) + "\" x2=\"" +
           format_double(x) + "\" y2=\"" + format_double(H - B) +
           "\" stroke=\"#ddd\" stroke-width=\"0.5\"/>\n";
    svg += "<text x=\"" + format_double(x) + "\" y=\"" + format_double(H - B + 16) +
           "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" + label +
           "</text>\n";
  };
  if (log_x) {
    for (int e = static_cast<int>(std::ceil(xmin)); e <= static_cast<int>(std::floor(xmax)); ++e)
      xtick(e, "1e" + std::to_string(e));
  } else {
    for (int i = 0; i <= 4; ++i)
      xtick(xmin + (xmax - xmin) * i / 4, format_double(xmin + (xmax - xmin) * i / 4));
  }
  for (int i = 0; i <= 4; ++i) {
    double v = ymin + (ymax - ymin) * i / 4;
    double y = py(v);
    svg += "<line x1=\"" + format_double(L) + "\" y1=\"" + format_double(y) + "\" x2=\"" +
           format_double(W - R) + "\" y2=\"" + format_double(y) +
           "\" stroke=\"#ddd\" stroke-width=\"0.5\"/>\n";
    svg += "<text x=\"" + format_double(L - 6) + "\" y=\"" + format_double(y + 4) +
           "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" + format_double(v) +
           "</text>\n";
  }
  svg += "<text x=\"" + format_double((L + W - R) / 2) + "\" y=\"" + format_double(H - 10) +
         "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">" + x_label +
         "</text>\n";
  svg += "<text x=\"16\" y=\"" + format_double((T + H - B) / 2) +
         "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\" transform=\"rotate(-90 16 " +
         format_double((T + H - B) / 2) + ")\">" + y_label + "</text>\n";

  double ly = T + 8;
  for (const ChartSeries& s : series) {
    if (!s.points.empty()) {
      std::string pts;
      for (auto [x, y] : s.points) pts += format_double(px(x)) + "," + format_double(py(y)) + " ";
      svg += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + s.color +
             "\" stroke-width=\"1.5\"/>\n";
      for (auto [x, y] : s.points)
        svg += "<circle cx=\"" + format_double(px(x)) + "\" cy=\"" + format_double(py(y)) +
               "\" r=\"2\" fill=\"" + s.color + "\"/>\n";
    }
    svg += "<rect x=\"" + format_double(W - R - 150) + "\" y=\"" + format_double(ly - 8) +
           "\" width=\"10\" height=\"10\" fill=\"" + s.color + "\"/>\n";
    svg += "<text x=\"" + format_double(W - R - 136) + "\" y=\"" + format_double(ly + 1) +
           "\" font-size=\"11\" font-family=\"sans-serif\">" + s.label + "</text>\n";
    ly += 16;
  }
  svg += "</svg>\n";
  return svg;
}

void stage_report(const ExperimentConfig& cfg, bool quiet) {
  require_artifact(cfg, paths::kSummary, "evaluate");
  StageClock clock;
  static const std::vector<std::string> kColors = {"#1f77b4", "#d62728", "#2ca02c",
                                                   "#ff7f0e", "#9467bd", "#8c564b"};
  // ROC chart: oslo curve points + baseline score ROCs
  std::vector<ChartSeries> roc_series;
  {
    SweepResult sweep = load_sweep(cfg);
    ChartSeries s;
    s.label = "oslo";
    s.color = kColors[0];
    for (auto it = sweep.curve.rbegin(); it != sweep.curve.rend(); ++it)
      s.points.emplace_back(std::max(it->fpr, 1e-4), it->tpr.value_or(0.0));
    roc_series.push_back(std::move(s));
  }
  size_t color = 1;
  for (const std::string& b : cfg.baselines.enabled) {
    std::string p = at(cfg, paths::baseline_scores(b));
    if (!fs::exists(p)) continue;
    ScoredPanel panel;
    for (const BaselineScoreRow& r : load_scores_csv(p)) panel.entries.push_back({r.score, r.is_member});
    ChartSeries s;
    s.label = b;
    s.color = kColors[color++ % kColors.size()];
    for (const RocPoint& r : roc_points(panel)) s.points.emplace_back(std::max(r.fpr, 1e-4), r.tpr);
    roc_series.push_back(std::move(s));
  }
  write_text_file(at(cfg, paths::kRocSvg),
                  line_chart_svg("Membership ROC (log FPR)", "false positive rate",
                                 "true positive rate", roc_series, /*log_x=*/true));

  // defense chart + table passthrough
  std::string defense_md;
  if (fs::exists(at(cfg, paths::kDefenseCsv))) {
    std::map<std::string, ChartSeries> per_kind;
    std::string text = read_text_file(at(cfg, paths::kDefenseCsv));
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    defense_md = "| defense | param | test acc | tpr@1%fpr |\n|---|---|---|---|\n";
    size_t kind_color = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> cells;
      std::istringstream ls(line);
      std::string cell;
      while (std::getline(ls, cell, ',')) cells.push_back(cell);
      if (cells.size() != 4) continue;
      defense_md += "| " + cells[0] + " | " + cells[1] + " | " + cells[2] + " | " + cells[3] + " |\n";
      ChartSeries& s = per_kind[cells[0]];
      if (s.label.empty()) {
        s.label = cells[0];
        s.color = kColors[kind_color++ % kColors.size()];
      }
      s.points.emplace_back(static_cast<double>(s.points.size() + 1),
                            std::strtod(cells[3].c_str(), nullptr));
    }
    std::vector<ChartSeries> ds;
    for (auto& [k, s] : per_kind) ds.push_back(s);
    write_text_file(at(cfg, paths::kDefenseSvg),
                    line_chart_svg("Attack power vs defense strength", "grid point (weak to strong)",
                                   "tpr @ 1% fpr", ds, false));
  }

  // report.md
  json summary = json::parse(read_text_file(at(cfg, paths::kSummary)));
  std::string md = "# Run report\n\nconfig hash `" +
                   summary["config_hash"].get<std::string>() + "`\n\n## Attack metrics\n\n";
  md += "| attack | tpr@0.1%fpr | tpr@1%fpr | max precision (recall >= 1%) | target queries |\n";
  md += "|---|---|---|---|---|\n";
  auto cell = [](const json& v) { return v.is_null() ? std::string("-") : format_double(v.get<double>()); };
  for (auto& [name, m] : summary["metrics"].items())
    md += "| " + name + " | " + cell(m["tpr_at_fpr_0001"]) + " | " + cell(m["tpr_at_fpr_001"]) +
          " | " + cell(m["max_precision_recall_ge_001"]) + " | " +
          std::to_string(m["queries"].get<int64_t>()) + " |\n";
  md += "\n![roc](roc.svg)\n";
  if (!defense_md.empty()) md += "\n## Defenses\n\n" + defense_md + "\n![defense](defense.svg)\n";
  for (const char* rel : {paths::kComparisonMd}) {
    if (fs::exists(at(cfg, rel))) md += "\n## Matched-fraction comparison\n\n" + read_text_file(at(cfg, rel));
  }
  if (fs::exists(at(cfg, paths::kCalibration))) {
    json cal = json::parse(read_text_file(at(cfg, paths::kCalibration)));
    md += "\n## Calibration\n\ntau " + format_double(cal["tau"].get<double>()) +
          " at target fpr " + format_double(cal["target-fpr"].get<double>()) +
          (cal["unachievable"].get<bool>() ? " (unachievable; smallest grid tau reported)" : "") + "\n";
  }
  write_text_file(at(cfg, paths::kReportMd), md);
  record_stage(cfg, "report", clock.seconds(),
               {paths::kReportMd, paths::kRocSvg, paths::kDefenseSvg});
  note(quiet, "report: wrote " + std::string(paths::kReportMd));
}

void run_pipeline(const ExperimentConfig& cfg, bool quiet) {
  stage_gen_data(cfg, quiet);
  stage_train(cfg, quiet);
  stage_attack_oslo(cfg, quiet);
  for (const std::string& b : cfg.baselines.enabled) stage_attack_baseline(cfg, b, quiet);
  stage_defend(cfg, quiet);
  stage_evaluate(cfg, quiet);
  stage_report(cfg, quiet);
}

void print_tau_curve(const ExperimentConfig& cfg) {
  if (!fs::exists(at(cfg, paths::kCurve))) stage_attack_oslo(cfg, /*quiet=*/true);
  SweepResult sweep = load_sweep(cfg);
  std::printf("%10s %8s %8s %10s %8s %9s\n", "tau", "tpr", "fpr", "precision", "recall", "flagged");
  for (const TauPoint& p : sweep.curve) {
    auto cell = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("-"); };
    std::printf("%10s %8s %8s %10s %8s %9s\n", format_double(p.tau).c_str(),
                cell(p.tpr).c_str(), format_double(p.fpr).c_str(), cell(p.precision).c_str(),
                cell(p.recall).c_str(), format_double(p.flagged_fraction).c_str());
  }
}

}  // namespace oslolab
