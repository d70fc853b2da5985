#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>
#include <string>

#include "oslolab/config.hpp"

using namespace oslolab;

namespace {

std::string msg_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("defaults are valid and carry the published values") {
  const ExperimentConfig cfg = default_config();
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.seed == 1);
  CHECK(cfg.target_arch.family == "cnn-a");
  CHECK(cfg.sources.families == std::vector<std::string>({"cnn-b", "cnn-c", "mlp"}));
  CHECK(cfg.validation.families == cfg.sources.families);
  CHECK(cfg.sources.count == 1);
  CHECK(cfg.attack.K == 80);
  CHECK(cfg.attack.N == 10);
  CHECK(cfg.attack.alpha == doctest::Approx(1.0 / 255.0));
  CHECK(cfg.attack.eps_max == doctest::Approx(80.0 / 255.0));
  CHECK(cfg.attack.method.mi);
  CHECK_FALSE(cfg.attack.method.di);
  CHECK(cfg.tau_list.size() == 9);
  CHECK(cfg.tau_list.front() == doctest::Approx(0.5));
  CHECK(cfg.tau_list.back() == doctest::Approx(0.001));
  CHECK(cfg.dataset.label_noise == doctest::Approx(0.08));
  CHECK(cfg.defense.panel_members == 200);
  CHECK(cfg.analysis.shots == std::vector<int64_t>({1, 2, 3}));
}

TEST_CASE("empty text parses to the defaults") {
  const ExperimentConfig cfg = parse_config("");
  CHECK(dump_config(cfg) == dump_config(default_config()));
  CHECK(config_hash(cfg) == config_hash(default_config()));
}

TEST_CASE("dump round trip is stable") {
  ExperimentConfig cfg = default_config();
  cfg.seed = 42;
  cfg.dataset.noise_sigma = 0.11;
  cfg.attack.tau = 0.05;
  cfg.tau_list = {0.2, 0.1, 0.02};
  cfg.analysis.shots = {1, 3};
  const std::string text = dump_config(cfg);
  const ExperimentConfig back = parse_config(text);
  CHECK(dump_config(back) == text);
  CHECK(config_hash(back) == config_hash(cfg));
  CHECK(back.seed == 42);
  CHECK(back.tau_list == cfg.tau_list);
  CHECK(config_hash(back) != config_hash(default_config()));
}

TEST_CASE("sections, fractions, comments, arrays") {
  const std::string text =
      "seed = 7            # trailing comment\n"
      "\n"
      "[dataset]\n"
      "classes = 5\n"
      "per-class = 120\n"
      "\n"
      "[attack]\n"
      "alpha = 1/255\n"
      "eps-max = 40/255\n"
      "tau-list = [0.5, 0.1, 1/100]\n"
      "methods = [\"di\", \"ti\"]\n"
      "\n"
      "[split]\n"
      "target-train = 200\n"
      "surrogate = 200\n"
      "eval-members = 50\n"
      "eval-nonmembers = 50\n"
      "calibration = 50\n"
      "\n"
      "[defense]\n"
      "panel-members = 50\n"
      "panel-nonmembers = 50\n"
      "\n"
      "[analysis]\n"
      "ablation-members = 50\n"
      "ablation-nonmembers = 50\n";
  const ExperimentConfig cfg = parse_config(text);
  CHECK(cfg.seed == 7);
  CHECK(cfg.dataset.classes == 5);
  CHECK(cfg.attack.alpha == 1.0 / 255.0);
  CHECK(cfg.attack.eps_max == 40.0 / 255.0);
  REQUIRE(cfg.tau_list.size() == 3);
  CHECK(cfg.tau_list[2] == 0.01);
  CHECK_FALSE(cfg.attack.method.mi);  // explicit list overrides the default
  CHECK(cfg.attack.method.di);
  CHECK(cfg.attack.method.ti);
  CHECK_FALSE(cfg.attack.method.admix);
}

TEST_CASE("translation grid takes flat pairs") {
  const std::string text = "[baselines]\naugmentation.translation-grid = [0, 1, -1, 0]\n";
  const ExperimentConfig cfg = parse_config(text);
  REQUIRE(cfg.baselines.augmentation.translation_grid.size() == 2);
  CHECK(cfg.baselines.augmentation.translation_grid[0].dy == 0);
  CHECK(cfg.baselines.augmentation.translation_grid[0].dx == 1);
  CHECK(cfg.baselines.augmentation.translation_grid[1].dy == -1);

  const std::string odd = "[baselines]\naugmentation.translation-grid = [0, 1, -1]\n";
  CHECK(msg_of([&] { parse_config(odd); }).find("(dy, dx) pairs") != std::string::npos);
}

TEST_CASE("syntax errors carry line numbers") {
  CHECK(msg_of([] { parse_config("seed = 1\nnot a kv pair\n"); }).find("line 2") !=
        std::string::npos);
  CHECK(msg_of([] { parse_config("\n\nmystery = 3\n"); }).find("unknown key 'mystery'") !=
        std::string::npos);
  CHECK(msg_of([] { parse_config("seed = 1\nseed = 2\n"); }).find("duplicate key 'seed'") !=
        std::string::npos);
  CHECK(msg_of([] { parse_config("[attack]\nalpha = 1/0\n"); }).find("zero denominator") !=
        std::string::npos);
  CHECK(msg_of([] { parse_config("seed =\n"); }).find("missing value") != std::string::npos);
  CHECK(msg_of([] { parse_config("[attack]\ntau-list = [0.5, 0.1\n"); })
            .find("close on the same line") != std::string::npos);
  CHECK(msg_of([] { parse_config("[dataset]\nclasses = 3.5\n"); }).find("must be an integer") !=
        std::string::npos);
  CHECK(msg_of([] { parse_config("[target]\nfamily = 12\n"); }).find("must be a string") !=
        std::string::npos);
  CHECK(msg_of([] { parse_config("[attack]\nmethods = [\"warp\"]\n"); })
            .find("unknown method 'warp'") != std::string::npos);
  CHECK(msg_of([] { parse_config("seed = 1\n[bad name]\nx = 1\n"); }).find("bad section name") !=
        std::string::npos);
}

TEST_CASE("range violations are rejected") {
  CHECK(msg_of([] { parse_config("[attack]\ntau = 1.5\n"); }).find("tau") != std::string::npos);
  CHECK(msg_of([] { parse_config("[attack]\ntau-list = [0.1, 0.5]\n"); })
            .find("strictly decreasing") != std::string::npos);
  CHECK(msg_of([] { parse_config("[sources]\nfamilies = [\"cnn-a\"]\n"); })
            .find("matches the target") != std::string::npos);
  CHECK(msg_of([] { parse_config("[analysis]\nshots = [1, 2, 30]\n"); })
            .find("cannot exceed the tau-list length") != std::string::npos);
  CHECK(msg_of([] { parse_config("[dataset]\nlabel-noise = 0.7\n"); })
            .find("label-noise must be in [0, 0.5)") != std::string::npos);
  CHECK(msg_of([] { parse_config("[dataset]\nclasses = 12\n"); })
            .find("classes must be in [4, 10]") != std::string::npos);
}

TEST_CASE("load_config reports missing files") {
  CHECK_THROWS_AS(load_config("does_not_exist.toml"), ConfigError);
}
