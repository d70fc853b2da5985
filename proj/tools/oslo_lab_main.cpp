// oslo-lab: label-only membership inference laboratory CLI.
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "oslolab/pipeline.hpp"

using namespace oslolab;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_override;
  int64_t seed_override = -1;
  int jobs_override = -1;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "TOML config file (defaults apply when omitted)");
  cmd->add_option("--seed", f.seed_override, "master seed override");
  cmd->add_option("--out", f.out_override, "output directory override");
  cmd->add_option("--jobs", f.jobs_override, "worker threads (0: OSLO_LAB_JOBS env, then hardware)");
}

ExperimentConfig resolve(const CommonFlags& f) {
  ExperimentConfig cfg = f.config_path.empty() ? default_config() : load_config(f.config_path);
  if (f.seed_override >= 0) cfg.seed = static_cast<uint64_t>(f.seed_override);
  if (!f.out_override.empty()) cfg.out_dir = f.out_override;
  if (f.jobs_override >= 0) cfg.jobs = f.jobs_override;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"oslo-lab: one-shot label-only membership inference laboratory"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  CommonFlags flags;
  std::string baseline_name;

  CLI::App* c_gen = app.add_subcommand("gen-data", "generate the dataset and splits");
  CLI::App* c_train = app.add_subcommand("train", "train target and transfer ensembles");
  CLI::App* c_attack = app.add_subcommand("attack", "run an attack against the target");
  CLI::App* c_oslo = c_attack->add_subcommand("oslo", "staged transfer attack with tau sweep");
  CLI::App* c_base = c_attack->add_subcommand("baseline", "score-based baseline attack");
  c_base->add_option("name", baseline_name, "gaussian | augmentation | shadow | global-threshold")
      ->required();
  c_attack->require_subcommand(1);
  CLI::App* c_defend = app.add_subcommand("defend", "train defended targets and re-evaluate");
  CLI::App* c_eval = app.add_subcommand("evaluate", "analysis artifacts and summary.json");
  CLI::App* c_sweep = app.add_subcommand("sweep-tau", "print the tau operating-point table");
  CLI::App* c_report = app.add_subcommand("report", "render report.md and charts");
  CLI::App* c_run = app.add_subcommand("run", "full pipeline end to end");
  for (CLI::App* c : {c_gen, c_train, c_oslo, c_base, c_defend, c_eval, c_sweep, c_report, c_run})
    add_common(c, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;  // unknown flag / subcommand / bad invocation
  }

  try {
    ExperimentConfig cfg = resolve(flags);
    if (c_gen->parsed()) stage_gen_data(cfg);
    if (c_train->parsed()) stage_train(cfg);
    if (c_oslo->parsed()) stage_attack_oslo(cfg);
    if (c_base->parsed()) stage_attack_baseline(cfg, baseline_name);
    if (c_defend->parsed()) stage_defend(cfg);
    if (c_eval->parsed()) stage_evaluate(cfg);
    if (c_sweep->parsed()) print_tau_curve(cfg);
    if (c_report->parsed()) stage_report(cfg);
    if (c_run->parsed()) run_pipeline(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
