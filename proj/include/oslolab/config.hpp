#pragma once
// Experiment configuration: a TOML-subset parser (sections, scalars, flat
// arrays, fraction literals like 80/255) and the fully-defaulted config
// structs. Unknown keys are rejected with line diagnostics.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "oslolab/baselines.hpp"
#include "oslolab/dataset.hpp"
#include "oslolab/defenses.hpp"
#include "oslolab/engine.hpp"
#include "oslolab/models.hpp"

namespace oslolab {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EnsembleSpec {
  std::vector<std::string> families;
  int64_t count = 1;  // models per family
  TrainConfig train;
};

struct SplitSpec {
  int64_t target_train = 1000;
  int64_t surrogate = 1000;
  int64_t eval_members = 200;
  int64_t eval_nonmembers = 200;
  int64_t calibration = 150;  // non-members held out for tau calibration
};

struct BaselinesSpec {
  std::vector<std::string> enabled = {"gaussian", "augmentation", "shadow", "global-threshold"};
  GaussianConfig gaussian;
  AugmentationConfig augmentation;
  std::string shadow_family = "cnn-b";
  TrainConfig shadow_train;
};

struct DefenseSweepSpec {
  std::vector<std::string> kinds = {"dropout", "dpsgd"};
  std::string dpsgd_family = "cnn-b";  // dpsgd trains per-example: keep it light
  int64_t panel_members = 200;
  int64_t panel_nonmembers = 200;
  TrainConfig train;
};

struct AnalysisSpec {
  double matched_fraction = 0.15;
  std::vector<int64_t> shots = {1, 2, 3};
  int64_t ablation_members = 100;
  int64_t ablation_nonmembers = 100;
  double epsilon_cover = 0.99;  // validation-flip quantile the large budget covers
};

struct ExperimentConfig {
  uint64_t seed = 1;
  std::string out_dir = "runs/default";
  int jobs = 0;  // 0: OSLO_LAB_JOBS env, then hardware

  SynthSpec dataset;
  SplitSpec split;

  ArchSpec target_arch;  // family cnn-a
  TrainConfig target_train;
  EnsembleSpec sources;
  EnsembleSpec validation;

  AttackConfig attack;
  std::vector<double> tau_list;  // strictly decreasing; defaults to the grid

  BaselinesSpec baselines;
  DefenseSweepSpec defense;
  AnalysisSpec analysis;

  void validate() const;  // cross-field invariants (family disjointness, ...)
};

ExperimentConfig default_config();

// Parses TOML-subset text. Throws ConfigError with "line N:" diagnostics on
// syntax errors, unknown keys, type mismatches, or range violations.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Canonical serialization (sorted keys) used for hashing and provenance.
std::string dump_config(const ExperimentConfig& cfg);
uint64_t config_hash(const ExperimentConfig& cfg);

}  // namespace oslolab
