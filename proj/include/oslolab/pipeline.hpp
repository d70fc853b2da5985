#pragma once
// End-to-end orchestration: staged artifact production under one output
// directory, a provenance manifest, and the deterministic summary.json.
// Every stage reloads its inputs from disk so the CLI subcommands compose.

#include <string>
#include <vector>

#include "oslolab/config.hpp"
#include "oslolab/engine.hpp"

namespace oslolab {

// Artifact paths relative to the run directory.
namespace paths {
inline constexpr const char* kConfig = "config.toml";
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kImages = "data/images.idx";
inline constexpr const char* kLabels = "data/labels.idx";
inline constexpr const char* kSplits = "data/splits.json";
inline constexpr const char* kCalibrationIds = "data/calibration-ids.json";
inline constexpr const char* kTargetModel = "models/target.bin";
inline constexpr const char* kModelStats = "models/accuracy.json";
inline constexpr const char* kCurve = "attack/curve.csv";
inline constexpr const char* kLabelFlipTraces = "attack/traces-label-flip.jsonl";
inline constexpr const char* kCalibration = "attack/calibration.json";
inline constexpr const char* kAttackQueries = "attack/queries.json";
inline constexpr const char* kFlipSearch = "baselines/flip-search.jsonl";
inline constexpr const char* kDefenseCsv = "defense/defense.csv";
inline constexpr const char* kDefenseNorms = "defense/dpsgd-norms.json";
inline constexpr const char* kComparisonCsv = "analysis/comparison.csv";
inline constexpr const char* kComparisonMd = "analysis/comparison.md";
inline constexpr const char* kBudgetCsv = "analysis/budget.csv";
inline constexpr const char* kStopModesCsv = "analysis/stop-modes.csv";
inline constexpr const char* kMultishotCsv = "analysis/multishot.csv";
inline constexpr const char* kSummary = "report/summary.json";
inline constexpr const char* kReportMd = "report/report.md";
inline constexpr const char* kRocSvg = "report/roc.svg";
inline constexpr const char* kDefenseSvg = "report/defense.svg";

std::string tau_traces(double tau);                 // attack/traces-tau-<tau>.jsonl
std::string baseline_scores(const std::string& b);  // baselines/<b>.csv
}  // namespace paths

// Stages. Each throws std::runtime_error when a required upstream artifact is
// missing. `quiet` suppresses the progress lines (tests).
void stage_gen_data(const ExperimentConfig& cfg, bool quiet = false);
void stage_train(const ExperimentConfig& cfg, bool quiet = false);
void stage_attack_oslo(const ExperimentConfig& cfg, bool quiet = false);
void stage_attack_baseline(const ExperimentConfig& cfg, const std::string& name,
                           bool quiet = false);
void stage_defend(const ExperimentConfig& cfg, bool quiet = false);
void stage_evaluate(const ExperimentConfig& cfg, bool quiet = false);
void stage_report(const ExperimentConfig& cfg, bool quiet = false);

// All stages in order; records wall-clock per stage in the manifest.
void run_pipeline(const ExperimentConfig& cfg, bool quiet = false);

// Prints the tau curve table (runs the attack stage first if needed).
void print_tau_curve(const ExperimentConfig& cfg);

// --- shared helpers (used by stages and tests) ------------------------------

// members/nonmembers are dataset indices; ids on the panel are those indices.
std::vector<PanelSample> build_panel(const LabeledDataset& data,
                                     const std::vector<int64_t>& members,
                                     const std::vector<int64_t>& nonmembers,
                                     int64_t member_count = -1, int64_t nonmember_count = -1);

// Deterministic calibration pool: unused indices after the split, shuffled by
// the "calibration" stream, truncated to cfg.split.calibration.
std::vector<int64_t> calibration_indices(const ExperimentConfig& cfg, const LabeledDataset& data,
                                         const SplitPlan& split);

struct ChartSeries {
  std::string label;
  std::string color;  // css color
  std::vector<std::pair<double, double>> points;
};

// Self-contained SVG line chart; log_x plots log10(x) with decade gridlines.
std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<ChartSeries>& series,
                           bool log_x = false);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);  // creates parents
uint64_t file_fnv(const std::string& path);

}  // namespace oslolab
