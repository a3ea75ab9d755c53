#include "nsfs/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace nsfs {

namespace {

enum class Kind { real, integer, u64, boolean, text, choice, int_list };

enum class Bound {
  none,
  positive,      // > 0
  non_negative,  // >= 0
  at_least_one,
  sgld_exponent,  // (0.5, 1]
};

struct KeySpec {
  const char* section;
  const char* key;
  Kind kind;
  const char* fallback;
  Bound bound = Bound::none;
  const char* choices = "";  // comma list for Kind::choice
  const char* models = "";   // comma list; empty means every model
  /// Per-model defaults "model=value;model=value" overriding `fallback`.
  const char* model_defaults = "";
};

constexpr const char* kModels = "conjugate,step,logistic,ica,hierarchical";

// Canonical order of the echo.
const KeySpec kSchema[] = {
    {"run", "method", Kind::choice, "nsfs", Bound::none, "nsfs,sfs,sgld,sgd"},
    {"run", "seed", Kind::u64, "0"},
    {"run", "threads", Kind::integer, "1", Bound::at_least_one},
    {"run", "time_limit_seconds", Kind::real, "0", Bound::non_negative},

    {"model", "name", Kind::choice, "conjugate", Bound::none, kModels},
    {"model", "prior_mean", Kind::real, "0", Bound::none, "", "conjugate"},
    {"model", "prior_var", Kind::real, "1", Bound::positive, "", "conjugate"},
    {"model", "noise_var", Kind::real, "1", Bound::positive, "", "conjugate"},
    {"model", "theta_true", Kind::real, "1", Bound::none, "", "conjugate"},
    {"model", "n", Kind::integer, "10", Bound::at_least_one, "", "conjugate,ica,hierarchical",
     "ica=1000;hierarchical=5"},
    {"model", "test_n", Kind::integer, "100", Bound::at_least_one, "", "conjugate,ica", "ica=500"},
    {"model", "prior_sd", Kind::real, "0.3", Bound::positive, "", "step,ica", "ica=1"},
    {"model", "noise_sd", Kind::real, "0.1", Bound::positive, "", "step"},
    {"model", "hidden", Kind::int_list, "100,100", Bound::at_least_one, "", "step"},
    {"model", "train_path", Kind::text, "data/a9a", Bound::none, "", "logistic"},
    {"model", "test_path", Kind::text, "data/a9a.t", Bound::none, "", "logistic"},
    {"model", "n_features", Kind::integer, "123", Bound::at_least_one, "", "logistic"},
    {"model", "prior_scale", Kind::real, "1", Bound::positive, "", "logistic"},
    {"model", "sources", Kind::integer, "3", Bound::at_least_one, "", "ica"},
    {"model", "include_log_det", Kind::boolean, "true", Bound::none, "", "ica"},
    {"model", "sigma", Kind::real, "1", Bound::positive, "", "hierarchical"},
    {"model", "data_seed", Kind::u64, "0", Bound::none, "", "conjugate,step,ica,hierarchical",
     "conjugate=7;step=3;hierarchical=11"},

    {"nsfs", "step_size", Kind::real, "1e-4", Bound::positive, "", "", "conjugate=3e-3;hierarchical=3e-3"},
    {"nsfs", "paths", Kind::integer, "32", Bound::at_least_one, "", "", "conjugate=64;hierarchical=64"},
    {"nsfs", "batch_size", Kind::integer, "32", Bound::non_negative, "", "",
     "conjugate=0;logistic=0;ica=10;hierarchical=0"},
    {"nsfs", "iterations", Kind::integer, "300", Bound::non_negative, "", "",
     "conjugate=2000;ica=2832;hierarchical=2000"},
    {"nsfs", "samples", Kind::integer, "100", Bound::at_least_one},
    {"nsfs", "gamma", Kind::real, "0.0025", Bound::positive, "", "",
     "conjugate=0.1;logistic=0.04;ica=0.0001;hierarchical=0.5"},
    {"nsfs", "dt_train", Kind::real, "0.05", Bound::positive},
    {"nsfs", "dt_test", Kind::real, "0.01", Bound::positive},
    {"nsfs", "estimator", Kind::choice, "relative_entropy", Bound::none, "relative_entropy,stl", "",
     "conjugate=stl;hierarchical=stl"},
    {"nsfs", "width", Kind::integer, "20", Bound::at_least_one},
    {"nsfs", "hidden_layers", Kind::integer, "4", Bound::at_least_one},
    {"nsfs", "batch_norm", Kind::boolean, "true", Bound::none, "", "", "step=false"},
    {"nsfs", "sample_norm", Kind::choice, "batch", Bound::none, "batch,running"},

    {"sgld", "a", Kind::real, "1e-3", Bound::positive, "", "", "logistic=1e-4;ica=1e-4"},
    {"sgld", "b", Kind::real, "10", Bound::positive, "", "", "logistic=1;ica=1"},
    {"sgld", "exponent", Kind::real, "0.55", Bound::sgld_exponent},
    {"sgld", "samples", Kind::integer, "100", Bound::at_least_one},
    {"sgld", "batch_size", Kind::integer, "32", Bound::at_least_one},
    {"sgld", "iterations", Kind::integer, "300", Bound::at_least_one, "", "", "ica=2832"},
    {"sgld", "init", Kind::choice, "origin", Bound::none, "origin,prior", "", "ica=prior"},

    {"sgd", "step_size", Kind::real, "1e-2", Bound::positive},
    {"sgd", "batch_size", Kind::integer, "32", Bound::at_least_one},
    {"sgd", "iterations", Kind::integer, "300", Bound::at_least_one},
    {"sgd", "init", Kind::choice, "origin", Bound::none, "origin,prior", "", "ica=prior"},

    {"sfs", "paths", Kind::integer, "100", Bound::at_least_one},
    {"sfs", "dt", Kind::real, "0.01", Bound::positive},
    {"sfs", "mc_samples", Kind::integer, "1000", Bound::at_least_one},
    {"sfs", "gamma", Kind::real, "1", Bound::positive},

    {"eval", "ece_bins", Kind::integer, "10", Bound::at_least_one},
    {"eval", "curve_lo", Kind::real, "-10"},
    {"eval", "curve_hi", Kind::real, "10"},
    {"eval", "curve_points", Kind::integer, "201", Bound::at_least_one},
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(s);
  while (std::getline(ss, cur, sep)) out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool listed(const char* list, const std::string& item) {
  if (!*list) return true;
  const auto parts = split(list, ',');
  return std::find(parts.begin(), parts.end(), item) != parts.end();
}

std::string path_of(const KeySpec& k) { return std::string(k.section) + "." + k.key; }

const KeySpec* find_spec(const std::string& key_path) {
  for (const auto& k : kSchema) {
    if (path_of(k) == key_path) return &k;
  }
  return nullptr;
}

std::string default_for(const KeySpec& k, const std::string& model) {
  for (const auto& entry : split(k.model_defaults, ';')) {
    const auto eq = entry.find('=');
    if (eq != std::string::npos && entry.substr(0, eq) == model) return entry.substr(eq + 1);
  }
  return k.fallback;
}

[[noreturn]] void fail(const std::string& key_path, const std::string& what) {
  throw ConfigError(key_path + ": " + what);
}

double parse_real(const std::string& key_path, const std::string& text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) fail(key_path, "expected a real number, got '" + text + "'");
  if (!std::isfinite(v)) fail(key_path, "must be finite");
  return v;
}

template <class T>
T parse_integral(const std::string& key_path, const std::string& text) {
  T v{};
  const auto* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end) fail(key_path, "expected an integer, got '" + text + "'");
  return v;
}

std::string shortest(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

void check_bound(const std::string& key_path, Bound b, double v) {
  switch (b) {
    case Bound::none: return;
    case Bound::positive:
      if (!(v > 0.0)) fail(key_path, "must be positive");
      return;
    case Bound::non_negative:
      if (!(v >= 0.0)) fail(key_path, "must be non-negative");
      return;
    case Bound::at_least_one:
      if (!(v >= 1.0)) fail(key_path, "must be at least 1");
      return;
    case Bound::sgld_exponent:
      if (!(v > 0.5 && v <= 1.0)) fail(key_path, "must lie in (0.5, 1]");
      return;
  }
}

/// Validates `text` for `spec` and returns its canonical form.
std::string canonical(const KeySpec& spec, const std::string& raw_text) {
  const std::string key_path = path_of(spec);
  const std::string text = trim(raw_text);
  switch (spec.kind) {
    case Kind::real: {
      const double v = parse_real(key_path, text);
      check_bound(key_path, spec.bound, v);
      return shortest(v);
    }
    case Kind::integer: {
      const auto v = parse_integral<long long>(key_path, text);
      check_bound(key_path, spec.bound, static_cast<double>(v));
      return std::to_string(v);
    }
    case Kind::u64:
      return std::to_string(parse_integral<std::uint64_t>(key_path, text));
    case Kind::boolean:
      if (text == "true" || text == "1" || text == "yes" || text == "on") return "true";
      if (text == "false" || text == "0" || text == "no" || text == "off") return "false";
      fail(key_path, "expected true or false, got '" + text + "'");
    case Kind::text:
      if (text.empty()) fail(key_path, "must not be empty");
      return text;
    case Kind::choice:
      if (!listed(spec.choices, text)) {
        fail(key_path, "'" + text + "' is not one of " + spec.choices);
      }
      return text;
    case Kind::int_list: {
      std::string out;
      for (const auto& part : split(text, ',')) {
        const auto v = parse_integral<long long>(key_path, trim(part));
        check_bound(key_path, spec.bound, static_cast<double>(v));
        out += (out.empty() ? "" : ",") + std::to_string(v);
      }
      if (out.empty()) fail(key_path, "must list at least one width");
      return out;
    }
  }
  return text;
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  values_["model.name"] = "conjugate";
  apply_defaults();
}

void ExperimentConfig::apply_defaults() {
  const std::string model = values_.at("model.name");
  for (auto it = values_.begin(); it != values_.end();) {
    const KeySpec* spec = find_spec(it->first);
    it = (spec && listed(spec->models, model)) ? std::next(it) : values_.erase(it);
  }
  for (const auto& k : kSchema) {
    if (!listed(k.models, model)) continue;
    values_.try_emplace(path_of(k), canonical(k, default_for(k, model)));
  }
}

void ExperimentConfig::set(const std::string& key_path, const std::string& value) {
  const KeySpec* spec = find_spec(key_path);
  if (!spec) fail(key_path, "unknown key");
  const std::string& model = values_.at("model.name");
  if (key_path != "model.name" && !listed(spec->models, model)) {
    fail(key_path, "does not apply to model '" + model + "'");
  }
  const std::string text = canonical(*spec, value);
  if (key_path == "model.name") {
    // Defaults differ per model, so only the [run] section survives a model change.
    std::map<std::string, std::string> kept;
    for (const auto& [k, v] : values_) {
      if (k.rfind("run.", 0) == 0) kept.emplace(k, v);
    }
    values_ = std::move(kept);
    values_["model.name"] = text;
    apply_defaults();
    return;
  }
  values_[key_path] = text;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  // read_ini only knows whole-line comments; drop trailing ones (after whitespace) first.
  std::string cleaned;
  {
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
      for (std::size_t i = 1; i < line.size(); ++i) {
        if ((line[i] == ';' || line[i] == '#') && std::isspace(static_cast<unsigned char>(line[i - 1]))) {
          line.erase(i);
          break;
        }
      }
      cleaned += line;
      cleaned += '\n';
    }
  }
  std::istringstream in(cleaned);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config syntax: " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  ExperimentConfig cfg;
  // The model decides which other keys exist, so it goes first.
  if (const auto model = tree.get_optional<std::string>("model.name")) cfg.set("model.name", *model);
  for (const auto& [section, body] : tree) {
    if (body.empty()) fail(section, "keys must sit inside a [section]");
    for (const auto& [key, node] : body) {
      if (!node.empty()) fail(section + "." + key, "nested keys are not supported");
      const std::string path = section + "." + key;
      if (path == "model.name") continue;
      cfg.set(path, node.data());
    }
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const std::string& ExperimentConfig::raw(const std::string& key_path) const {
  const auto it = values_.find(key_path);
  if (it == values_.end()) {
    if (!find_spec(key_path)) throw std::invalid_argument("no config key " + key_path);
    fail(key_path, "does not apply to model '" + values_.at("model.name") + "'");
  }
  return it->second;
}

std::string ExperimentConfig::get_string(const std::string& key_path) const { return raw(key_path); }

double ExperimentConfig::get_real(const std::string& key_path) const {
  return parse_real(key_path, raw(key_path));
}

Index ExperimentConfig::get_int(const std::string& key_path) const {
  return static_cast<Index>(parse_integral<long long>(key_path, raw(key_path)));
}

std::uint64_t ExperimentConfig::get_u64(const std::string& key_path) const {
  return parse_integral<std::uint64_t>(key_path, raw(key_path));
}

bool ExperimentConfig::get_bool(const std::string& key_path) const { return raw(key_path) == "true"; }

Index ExperimentConfig::steps_for(const std::string& dt_key_path) const {
  const double dt = get_real(dt_key_path);
  const double k = std::round(1.0 / dt);
  if (k < 1.0 || std::abs(k * dt - 1.0) > 1e-9) fail(dt_key_path, "1 / dt must be a whole number of steps");
  return static_cast<Index>(k);
}

const std::string& ExperimentConfig::model_name() const { return values_.at("model.name"); }
const std::string& ExperimentConfig::method() const { return values_.at("run.method"); }

std::string ExperimentConfig::echo() const {
  std::string out;
  std::string section;
  for (const auto& k : kSchema) {
    const auto it = values_.find(path_of(k));
    if (it == values_.end()) continue;
    if (section != k.section) {
      out += (out.empty() ? "[" : "\n[") + std::string(k.section) + "]\n";
      section = k.section;
    }
    out += std::string(k.key) + " = " + it->second + "\n";
  }
  return out;
}

std::vector<std::string> ExperimentConfig::keys_for_model(const std::string& model_name) {
  if (!listed(kModels, model_name)) throw ConfigError("model.name: unknown model '" + model_name + "'");
  std::vector<std::string> keys;
  for (const auto& k : kSchema) {
    if (listed(k.models, model_name)) keys.push_back(path_of(k));
  }
  return keys;
}

}  // namespace nsfs
