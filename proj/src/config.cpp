#include "oslolab/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "oslolab/rng.hpp"
#include "oslolab/tensor.hpp"

namespace oslolab {
namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

struct Raw {
  enum Kind { kStr, kNum, kBool, kArr } kind = kNum;
  std::string str;
  double num = 0;
  bool is_int = false;
  int64_t inum = 0;
  bool flag = false;
  std::vector<Raw> items;
  int line = 0;
  mutable bool used = false;
};

[[noreturn]] void fail(int line, const std::string& msg) {
  throw ConfigError("config line " + std::to_string(line) + ": " + msg);
}

bool parse_int_literal(const std::string& t, int64_t* out) {
  if (t.empty()) return false;
  size_t i = (t[0] == '+' || t[0] == '-') ? 1 : 0;
  if (i >= t.size()) return false;
  for (size_t k = i; k < t.size(); ++k)
    if (!std::isdigit(static_cast<unsigned char>(t[k]))) return false;
  out[0] = std::strtoll(t.c_str(), nullptr, 10);
  return true;
}

bool parse_num_literal(const std::string& t, double* out) {
  if (t.empty()) return false;
  char* end = nullptr;
  double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size()) return false;
  *out = v;
  return true;
}

Raw parse_scalar(const std::string& text, int line) {
  Raw v;
  v.line = line;
  if (text.empty()) fail(line, "missing value");
  if (text[0] == '"') {
    if (text.size() < 2 || text.back() != '"') fail(line, "unterminated string");
    v.kind = Raw::kStr;
    std::string out;
    for (size_t i = 1; i + 1 < text.size(); ++i) {
      if (text[i] == '\\' && i + 2 < text.size()) {
        ++i;
        out.push_back(text[i]);
      } else {
        out.push_back(text[i]);
      }
    }
    v.str = out;
    return v;
  }
  if (text == "true" || text == "false") {
    v.kind = Raw::kBool;
    v.flag = text == "true";
    return v;
  }
  // fraction literal a/b (both plain numbers), e.g. 1/255
  size_t slash = text.find('/');
  if (slash != std::string::npos && slash > 0) {
    double a = 0, b = 0;
    if (parse_num_literal(text.substr(0, slash), &a) && parse_num_literal(text.substr(slash + 1), &b)) {
      if (b == 0) fail(line, "fraction with zero denominator '" + text + "'");
      v.kind = Raw::kNum;
      v.num = a / b;
      return v;
    }
  }
  if (parse_int_literal(text, &v.inum)) {
    v.kind = Raw::kNum;
    v.is_int = true;
    v.num = static_cast<double>(v.inum);
    return v;
  }
  if (parse_num_literal(text, &v.num)) {
    v.kind = Raw::kNum;
    return v;
  }
  fail(line, "cannot parse value '" + text + "'");
}

Raw parse_value(const std::string& text, int line) {
  if (!text.empty() && text[0] == '[') {
    if (text.back() != ']') fail(line, "array must close on the same line");
    Raw v;
    v.kind = Raw::kArr;
    v.line = line;
    std::string inner = trim(text.substr(1, text.size() - 2));
    if (inner.empty()) return v;
    std::string cur;
    bool in_str = false;
    for (size_t i = 0; i < inner.size(); ++i) {
      char c = inner[i];
      if (c == '"' && (i == 0 || inner[i - 1] != '\\')) in_str = !in_str;
      if (c == ',' && !in_str) {
        v.items.push_back(parse_scalar(trim(cur), line));
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    v.items.push_back(parse_scalar(trim(cur), line));
    return v;
  }
  return parse_scalar(text, line);
}

bool valid_key_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
}

std::map<std::string, Raw> parse_raw(const std::string& text) {
  std::map<std::string, Raw> out;
  std::string prefix;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // strip comments outside strings
    std::string clean;
    bool in_str = false;
    for (size_t i = 0; i < line.size(); ++i) {
      char c = line[i];
      if (c == '"' && (i == 0 || line[i - 1] != '\\')) in_str = !in_str;
      if (c == '#' && !in_str) break;
      clean.push_back(c);
    }
    clean = trim(clean);
    if (clean.empty()) continue;
    if (clean[0] == '[') {
      if (clean.back() != ']') fail(lineno, "unterminated section header");
      std::string sec = trim(clean.substr(1, clean.size() - 2));
      if (sec.empty()) fail(lineno, "empty section name");
      for (char c : sec)
        if (!valid_key_char(c)) fail(lineno, "bad section name '" + sec + "'");
      prefix = sec;
      continue;
    }
    size_t eq = clean.find('=');
    if (eq == std::string::npos) fail(lineno, "expected 'key = value'");
    std::string key = trim(clean.substr(0, eq));
    std::string val = trim(clean.substr(eq + 1));
    if (key.empty()) fail(lineno, "empty key");
    for (char c : key)
      if (!valid_key_char(c)) fail(lineno, "bad key '" + key + "'");
    std::string full = prefix.empty() ? key : prefix + "." + key;
    if (out.count(full)) fail(lineno, "duplicate key '" + full + "'");
    out[full] = parse_value(val, lineno);
  }
  return out;
}

// --- typed accessors over the flat map -------------------------------------

struct Reader {
  const std::map<std::string, Raw>& kv;

  const Raw* find(const std::string& path) const {
    auto it = kv.find(path);
    if (it == kv.end()) return nullptr;
    it->second.used = true;
    return &it->second;
  }

  void num(const std::string& path, double* dst) const {
    const Raw* r = find(path);
    if (!r) return;
    if (r->kind != Raw::kNum) fail(r->line, path + " must be a number");
    *dst = r->num;
  }
  void integer(const std::string& path, int64_t* dst) const {
    const Raw* r = find(path);
    if (!r) return;
    if (r->kind != Raw::kNum || !r->is_int) fail(r->line, path + " must be an integer");
    *dst = r->inum;
  }
  void integer(const std::string& path, int* dst) const {
    int64_t v = *dst;
    integer(path, &v);
    *dst = static_cast<int>(v);
  }
  void uinteger(const std::string& path, uint64_t* dst) const {
    const Raw* r = find(path);
    if (!r) return;
    if (r->kind != Raw::kNum || !r->is_int || r->inum < 0) fail(r->line, path + " must be a non-negative integer");
    *dst = static_cast<uint64_t>(r->inum);
  }
  void str(const std::string& path, std::string* dst) const {
    const Raw* r = find(path);
    if (!r) return;
    if (r->kind != Raw::kStr) fail(r->line, path + " must be a string");
    *dst = r->str;
  }
  void str_list(const std::string& path, std::vector<std::string>* dst) const {
    const Raw* r = find(path);
    if (!r) return;
    if (r->kind != Raw::kArr) fail(r->line, path + " must be an array of strings");
    std::vector<std::string> out;
    for (const Raw& e : r->items) {
      if (e.kind != Raw::kStr) fail(r->line, path + " must be an array of strings");
      out.push_back(e.str);
    }
    *dst = out;
  }
  void num_list(const std::string& path, std::vector<double>* dst) const {
    const Raw* r = find(path);
    if (!r) return;
    if (r->kind != Raw::kArr) fail(r->line, path + " must be an array of numbers");
    std::vector<double> out;
    for (const Raw& e : r->items) {
      if (e.kind != Raw::kNum) fail(r->line, path + " must be an array of numbers");
      out.push_back(e.num);
    }
    *dst = out;
  }
  void int_list(const std::string& path, std::vector<int64_t>* dst) const {
    const Raw* r = find(path);
    if (!r) return;
    if (r->kind != Raw::kArr) fail(r->line, path + " must be an array of integers");
    std::vector<int64_t> out;
    for (const Raw& e : r->items) {
      if (e.kind != Raw::kNum || !e.is_int) fail(r->line, path + " must be an array of integers");
      out.push_back(e.inum);
    }
    *dst = out;
  }

  void train(const std::string& prefix, TrainConfig* t) const {
    str(prefix + ".optimizer", &t->optimizer);
    num(prefix + ".learning-rate", &t->learning_rate);
    integer(prefix + ".epochs", &t->epochs);
    integer(prefix + ".batch-size", &t->batch_size);
    num(prefix + ".weight-decay-l2", &t->weight_decay_l2);
    num(prefix + ".weight-decay-l1", &t->weight_decay_l1);
  }
};

const std::set<std::string>& known_families() {
  static const std::set<std::string> f = {"mlp", "cnn-a", "cnn-b", "cnn-c", "cnn-d"};
  return f;
}

void check(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig cfg;
  cfg.target_arch.family = "cnn-a";
  cfg.sources.families = {"cnn-b", "cnn-c", "mlp"};
  cfg.validation.families = {"cnn-b", "cnn-c", "mlp"};
  cfg.attack.method.mi = true;
  cfg.tau_list = calibration_tau_grid();
  return cfg;
}

void ExperimentConfig::validate() const {
  check(dataset.classes >= 4 && dataset.classes <= 10, "dataset.classes must be in [4, 10]");
  check(dataset.per_class > 0, "dataset.per-class must be positive");
  check(dataset.height >= 8 && dataset.width >= 8, "dataset.height/width must be >= 8");
  check(dataset.height % 2 == 0 && dataset.width % 2 == 0, "dataset.height/width must be even");
  check(dataset.field_weight >= 0 && dataset.field_weight <= 1, "dataset.field-weight must be in [0, 1]");
  check(dataset.noise_sigma >= 0, "dataset.noise-sigma must be >= 0");
  check(dataset.label_noise >= 0 && dataset.label_noise < 0.5,
        "dataset.label-noise must be in [0, 0.5)");
  check(dataset.max_shift >= 0, "dataset.max-shift must be >= 0");

  const int64_t n = dataset.classes * dataset.per_class;
  check(split.target_train > 0 && split.surrogate > 0, "split sizes must be positive");
  check(split.eval_members > 0 && split.eval_nonmembers > 0, "split eval sizes must be positive");
  check(split.calibration >= 0, "split.calibration must be >= 0");
  check(split.eval_members <= split.target_train, "split.eval-members cannot exceed split.target-train");
  check(split.target_train + split.surrogate + split.eval_nonmembers + split.calibration <= n,
        "split sizes exceed the dataset (" + std::to_string(n) + " samples)");

  target_arch.validate();
  target_train.validate();

  auto check_ensemble = [&](const EnsembleSpec& e, const std::string& who) {
    check(!e.families.empty(), who + ".families must be non-empty");
    check(e.count > 0, who + ".count must be positive");
    for (const std::string& f : e.families) {
      check(known_families().count(f) != 0, who + ": unknown family '" + f + "'");
      check(f != target_arch.family,
            who + ": family '" + f + "' matches the target; transfer ensembles must differ");
    }
    e.train.validate();
  };
  check_ensemble(sources, "sources");
  check_ensemble(validation, "validation");

  attack.validate();
  check(!tau_list.empty(), "attack.tau-list must be non-empty");
  for (size_t i = 0; i < tau_list.size(); ++i) {
    check(tau_list[i] > 0 && tau_list[i] <= 1, "attack.tau-list entries must be in (0, 1]");
    if (i) check(tau_list[i] < tau_list[i - 1], "attack.tau-list must be strictly decreasing");
  }

  static const std::set<std::string> known_baselines = {"gaussian", "augmentation", "shadow", "global-threshold"};
  for (const std::string& b : baselines.enabled)
    check(known_baselines.count(b) != 0, "baselines: unknown attack '" + b + "'");
  baselines.gaussian.validate();
  baselines.augmentation.validate();
  check(known_families().count(baselines.shadow_family) != 0,
        "baselines.shadow: unknown family '" + baselines.shadow_family + "'");
  check(baselines.shadow_family != target_arch.family,
        "baselines.shadow.family must differ from the target family");
  baselines.shadow_train.validate();

  static const std::set<std::string> known_defenses = {"l2", "l1", "dropout", "dpsgd", "adv-train"};
  for (const std::string& k : defense.kinds)
    check(known_defenses.count(k) != 0, "defense: unknown kind '" + k + "'");
  check(known_families().count(defense.dpsgd_family) != 0,
        "defense: unknown dpsgd-family '" + defense.dpsgd_family + "'");
  check(defense.panel_members > 0 && defense.panel_members <= split.eval_members,
        "defense.panel-members must be in [1, split.eval-members]");
  check(defense.panel_nonmembers > 0 && defense.panel_nonmembers <= split.eval_nonmembers,
        "defense.panel-nonmembers must be in [1, split.eval-nonmembers]");
  defense.train.validate();

  check(analysis.matched_fraction > 0 && analysis.matched_fraction < 1,
        "analysis.matched-fraction must be in (0, 1)");
  check(!analysis.shots.empty(), "analysis.shots must be non-empty");
  for (size_t i = 0; i < analysis.shots.size(); ++i) {
    check(analysis.shots[i] >= 1, "analysis.shots entries must be >= 1");
    check(analysis.shots[i] <= static_cast<int64_t>(tau_list.size()),
          "analysis.shots entries cannot exceed the tau-list length");
    if (i) check(analysis.shots[i] > analysis.shots[i - 1], "analysis.shots must be strictly increasing");
  }
  check(analysis.ablation_members > 0 && analysis.ablation_members <= split.eval_members,
        "analysis.ablation-members must be in [1, split.eval-members]");
  check(analysis.ablation_nonmembers > 0 && analysis.ablation_nonmembers <= split.eval_nonmembers,
        "analysis.ablation-nonmembers must be in [1, split.eval-nonmembers]");
  check(analysis.epsilon_cover > 0 && analysis.epsilon_cover <= 1, "analysis.epsilon-cover must be in (0, 1]");
}

ExperimentConfig parse_config(const std::string& text) {
  std::map<std::string, Raw> raw = parse_raw(text);
  Reader rd{raw};
  ExperimentConfig cfg = default_config();

  rd.uinteger("seed", &cfg.seed);
  rd.str("out", &cfg.out_dir);
  rd.integer("jobs", &cfg.jobs);

  rd.integer("dataset.classes", &cfg.dataset.classes);
  rd.integer("dataset.per-class", &cfg.dataset.per_class);
  rd.integer("dataset.height", &cfg.dataset.height);
  rd.integer("dataset.width", &cfg.dataset.width);
  rd.num("dataset.field-weight", &cfg.dataset.field_weight);
  rd.num("dataset.noise-sigma", &cfg.dataset.noise_sigma);
  rd.num("dataset.label-noise", &cfg.dataset.label_noise);
  rd.num("dataset.max-rotation", &cfg.dataset.max_rot_deg);
  rd.integer("dataset.max-shift", &cfg.dataset.max_shift);

  rd.integer("split.target-train", &cfg.split.target_train);
  rd.integer("split.surrogate", &cfg.split.surrogate);
  rd.integer("split.eval-members", &cfg.split.eval_members);
  rd.integer("split.eval-nonmembers", &cfg.split.eval_nonmembers);
  rd.integer("split.calibration", &cfg.split.calibration);

  rd.str("target.family", &cfg.target_arch.family);
  rd.num("target.dropout", &cfg.target_arch.dropout_rate);
  rd.train("target.train", &cfg.target_train);

  rd.str_list("sources.families", &cfg.sources.families);
  rd.integer("sources.count", &cfg.sources.count);
  rd.train("sources.train", &cfg.sources.train);
  rd.str_list("validation.families", &cfg.validation.families);
  rd.integer("validation.count", &cfg.validation.count);
  rd.train("validation.train", &cfg.validation.train);

  rd.integer("attack.stages", &cfg.attack.K);
  rd.integer("attack.iterations", &cfg.attack.N);
  rd.num("attack.alpha", &cfg.attack.alpha);
  rd.num("attack.eps-max", &cfg.attack.eps_max);
  rd.num("attack.tau", &cfg.attack.tau);
  rd.num_list("attack.tau-list", &cfg.tau_list);
  rd.str("attack.validation-rule", &cfg.attack.validation_rule);
  rd.str("attack.stop-mode", &cfg.attack.stop_mode);
  std::vector<std::string> methods;
  bool have_methods = raw.count("attack.methods") != 0;
  rd.str_list("attack.methods", &methods);
  if (have_methods) {
    cfg.attack.method.mi = cfg.attack.method.di = false;
    cfg.attack.method.ti = cfg.attack.method.admix = false;
    for (const std::string& m : methods) {
      if (m == "mi")
        cfg.attack.method.mi = true;
      else if (m == "di")
        cfg.attack.method.di = true;
      else if (m == "ti")
        cfg.attack.method.ti = true;
      else if (m == "admix")
        cfg.attack.method.admix = true;
      else
        fail(raw.at("attack.methods").line, "attack.methods: unknown method '" + m + "'");
    }
  }
  rd.num("attack.mu", &cfg.attack.method.mu);
  rd.num("attack.di-probability", &cfg.attack.method.di_p);
  rd.integer("attack.ti-radius", &cfg.attack.method.ti_radius);
  rd.num("attack.admix-eta", &cfg.attack.method.admix_eta);
  rd.integer("attack.admix-count", &cfg.attack.method.admix_count);

  rd.str_list("baselines.enabled", &cfg.baselines.enabled);
  rd.num_list("baselines.gaussian.sigma-grid", &cfg.baselines.gaussian.sigma_grid);
  rd.integer("baselines.gaussian.trials-per-sigma", &cfg.baselines.gaussian.trials_per_sigma);
  rd.integer("baselines.gaussian.query-budget", &cfg.baselines.gaussian.query_budget);
  rd.num_list("baselines.augmentation.rotation-grid", &cfg.baselines.augmentation.rotation_grid);
  if (raw.count("baselines.augmentation.translation-grid")) {
    std::vector<int64_t> flat;
    rd.int_list("baselines.augmentation.translation-grid", &flat);
    if (flat.size() % 2 != 0)
      fail(raw.at("baselines.augmentation.translation-grid").line,
           "baselines.augmentation.translation-grid must hold (dy, dx) pairs");
    cfg.baselines.augmentation.translation_grid.clear();
    for (size_t i = 0; i < flat.size(); i += 2)
      cfg.baselines.augmentation.translation_grid.push_back({flat[i], flat[i + 1]});
  }
  rd.str("baselines.shadow.family", &cfg.baselines.shadow_family);
  rd.train("baselines.shadow.train", &cfg.baselines.shadow_train);

  rd.str_list("defense.kinds", &cfg.defense.kinds);
  rd.str("defense.dpsgd-family", &cfg.defense.dpsgd_family);
  rd.integer("defense.panel-members", &cfg.defense.panel_members);
  rd.integer("defense.panel-nonmembers", &cfg.defense.panel_nonmembers);
  rd.train("defense.train", &cfg.defense.train);

  rd.num("analysis.matched-fraction", &cfg.analysis.matched_fraction);
  rd.int_list("analysis.shots", &cfg.analysis.shots);
  rd.integer("analysis.ablation-members", &cfg.analysis.ablation_members);
  rd.integer("analysis.ablation-nonmembers", &cfg.analysis.ablation_nonmembers);
  rd.num("analysis.epsilon-cover", &cfg.analysis.epsilon_cover);

  for (const auto& [key, val] : raw)
    if (!val.used) fail(val.line, "unknown key '" + key + "'");

  try {
    cfg.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

namespace {

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string num_list_str(const std::vector<double>& v) {
  std::string out = "[";
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += format_double(v[i]);
  }
  return out + "]";
}

std::string int_list_str(const std::vector<int64_t>& v) {
  std::string out = "[";
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(v[i]);
  }
  return out + "]";
}

std::string str_list_str(const std::vector<std::string>& v) {
  std::string out = "[";
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += quote(v[i]);
  }
  return out + "]";
}

}  // namespace

std::string dump_config(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> kv;
  auto put = [&](const std::string& k, const std::string& v) { kv.emplace_back(k, v); };
  auto put_train = [&](const std::string& p, const TrainConfig& t) {
    put(p + ".optimizer", quote(t.optimizer));
    put(p + ".learning-rate", format_double(t.learning_rate));
    put(p + ".epochs", std::to_string(t.epochs));
    put(p + ".batch-size", std::to_string(t.batch_size));
    put(p + ".weight-decay-l2", format_double(t.weight_decay_l2));
    put(p + ".weight-decay-l1", format_double(t.weight_decay_l1));
  };

  put("seed", std::to_string(cfg.seed));
  put("out", quote(cfg.out_dir));
  put("jobs", std::to_string(cfg.jobs));
  put("dataset.classes", std::to_string(cfg.dataset.classes));
  put("dataset.per-class", std::to_string(cfg.dataset.per_class));
  put("dataset.height", std::to_string(cfg.dataset.height));
  put("dataset.width", std::to_string(cfg.dataset.width));
  put("dataset.field-weight", format_double(cfg.dataset.field_weight));
  put("dataset.noise-sigma", format_double(cfg.dataset.noise_sigma));
  put("dataset.label-noise", format_double(cfg.dataset.label_noise));
  put("dataset.max-rotation", format_double(cfg.dataset.max_rot_deg));
  put("dataset.max-shift", std::to_string(cfg.dataset.max_shift));
  put("split.target-train", std::to_string(cfg.split.target_train));
  put("split.surrogate", std::to_string(cfg.split.surrogate));
  put("split.eval-members", std::to_string(cfg.split.eval_members));
  put("split.eval-nonmembers", std::to_string(cfg.split.eval_nonmembers));
  put("split.calibration", std::to_string(cfg.split.calibration));
  put("target.family", quote(cfg.target_arch.family));
  put("target.dropout", format_double(cfg.target_arch.dropout_rate));
  put_train("target.train", cfg.target_train);
  put("sources.families", str_list_str(cfg.sources.families));
  put("sources.count", std::to_string(cfg.sources.count));
  put_train("sources.train", cfg.sources.train);
  put("validation.families", str_list_str(cfg.validation.families));
  put("validation.count", std::to_string(cfg.validation.count));
  put_train("validation.train", cfg.validation.train);
  put("attack.stages", std::to_string(cfg.attack.K));
  put("attack.iterations", std::to_string(cfg.attack.N));
  put("attack.alpha", format_double(cfg.attack.alpha));
  put("attack.eps-max", format_double(cfg.attack.eps_max));
  put("attack.tau", format_double(cfg.attack.tau));
  put("attack.tau-list", num_list_str(cfg.tau_list));
  put("attack.validation-rule", quote(cfg.attack.validation_rule));
  put("attack.stop-mode", quote(cfg.attack.stop_mode));
  std::vector<std::string> methods;
  if (cfg.attack.method.mi) methods.push_back("mi");
  if (cfg.attack.method.di) methods.push_back("di");
  if (cfg.attack.method.ti) methods.push_back("ti");
  if (cfg.attack.method.admix) methods.push_back("admix");
  put("attack.methods", str_list_str(methods));
  put("attack.mu", format_double(cfg.attack.method.mu));
  put("attack.di-probability", format_double(cfg.attack.method.di_p));
  put("attack.ti-radius", std::to_string(cfg.attack.method.ti_radius));
  put("attack.admix-eta", format_double(cfg.attack.method.admix_eta));
  put("attack.admix-count", std::to_string(cfg.attack.method.admix_count));
  put("baselines.enabled", str_list_str(cfg.baselines.enabled));
  put("baselines.gaussian.sigma-grid", num_list_str(cfg.baselines.gaussian.sigma_grid));
  put("baselines.gaussian.trials-per-sigma", std::to_string(cfg.baselines.gaussian.trials_per_sigma));
  put("baselines.gaussian.query-budget", std::to_string(cfg.baselines.gaussian.query_budget));
  put("baselines.augmentation.rotation-grid", num_list_str(cfg.baselines.augmentation.rotation_grid));
  std::vector<int64_t> flat;
  for (const TranslationOffset& t : cfg.baselines.augmentation.translation_grid) {
    flat.push_back(t.dy);
    flat.push_back(t.dx);
  }
  put("baselines.augmentation.translation-grid", int_list_str(flat));
  put("baselines.shadow.family", quote(cfg.baselines.shadow_family));
  put_train("baselines.shadow.train", cfg.baselines.shadow_train);
  put("defense.kinds", str_list_str(cfg.defense.kinds));
  put("defense.dpsgd-family", quote(cfg.defense.dpsgd_family));
  put("defense.panel-members", std::to_string(cfg.defense.panel_members));
  put("defense.panel-nonmembers", std::to_string(cfg.defense.panel_nonmembers));
  put_train("defense.train", cfg.defense.train);
  put("analysis.matched-fraction", format_double(cfg.analysis.matched_fraction));
  put("analysis.shots", int_list_str(cfg.analysis.shots));
  put("analysis.ablation-members", std::to_string(cfg.analysis.ablation_members));
  put("analysis.ablation-nonmembers", std::to_string(cfg.analysis.ablation_nonmembers));
  put("analysis.epsilon-cover", format_double(cfg.analysis.epsilon_cover));

  std::sort(kv.begin(), kv.end());
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

uint64_t config_hash(const ExperimentConfig& cfg) { return fnv1a64(dump_config(cfg)); }

}  // namespace oslolab
