#pragma once

// Experiment configuration: a flat text file of `key = value` lines grouped
// under `[section]` headers, typed and defaulted by a per-experiment schema.

#include "nninfo/core.hpp"
#include "nninfo/serialize.hpp"

#include <map>
#include <string>
#include <vector>

namespace nninfo::harness {

/// Unparseable or invalid configuration; the CLI maps it to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config"; }
};

enum class ValueType { Real, Int, UInt, Bool, String, Enum, RealList, UIntList };

inline const char* to_string(ValueType t) {
  switch (t) {
    case ValueType::Real: return "real";
    case ValueType::Int: return "integer";
    case ValueType::UInt: return "non-negative integer";
    case ValueType::Bool: return "boolean";
    case ValueType::String: return "string";
    case ValueType::Enum: return "enum";
    case ValueType::RealList: return "list of reals";
    case ValueType::UIntList: return "list of non-negative integers";
  }
  return "?";
}

struct KeySpec {
  std::string section;
  std::string key;
  ValueType type;
  std::string fallback;
  std::string doc;
  std::vector<std::string> choices;  // Enum only

  std::string name() const { return section.empty() ? key : section + "." + key; }
};

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"fig1-fisher-growth", "fig2-stability", "fig3-toy-mi",
                                              "fig4-sweeps",        "kramers",        "effective-info"};
  return names;
}

namespace detail {

inline std::vector<KeySpec> common_keys() {
  return {
      {"", "experiment", ValueType::Enum, "", "experiment to run", experiment_names()},
      {"", "seed", ValueType::UInt, "0", "master seed; every stream derives from it", {}},
      {"", "out", ValueType::String, "results", "output directory", {}},
  };
}

inline std::vector<KeySpec> mlp_keys(const std::string& hidden, const std::string& activation) {
  return {
      {"model", "hidden", ValueType::UIntList, hidden, "hidden layer widths", {}},
      {"model", "activation", ValueType::Enum, activation, "hidden nonlinearity", {"tanh", "relu", "linear"}},
      {"model", "init_scale", ValueType::Real, "1", "multiplier on the N(0, 2/fan_in) initialization", {}},
  };
}

inline std::vector<KeySpec> train_keys(const std::string& eta, const std::string& batch, const std::string& steps,
                                       const std::string& stride) {
  return {
      {"train", "eta", ValueType::Real, eta, "step size", {}},
      {"train", "batch", ValueType::UInt, batch, "minibatch size", {}},
      {"train", "steps", ValueType::Int, steps, "SGD steps", {}},
      {"train", "momentum", ValueType::Real, "0", "heavy-ball momentum in [0, 1)", {}},
      {"train", "weight_decay", ValueType::Real, "0", "L2 coefficient added to the gradient", {}},
      {"train", "noise", ValueType::Enum, "minibatch", "gradient noise", {"minibatch", "isotropic"}},
      {"train", "temperature", ValueType::Real, "0", "isotropic noise temperature", {}},
      {"train", "snapshot_stride", ValueType::Int, stride, "steps between snapshots", {}},
  };
}

inline void append(std::vector<KeySpec>& a, const std::vector<KeySpec>& b) { a.insert(a.end(), b.begin(), b.end()); }

}  // namespace detail

/// Every key the experiment accepts, in manifest order.
inline std::vector<KeySpec> schema_for(const std::string& experiment) {
  using detail::append;
  std::vector<KeySpec> s = detail::common_keys();
  if (experiment == "fig1-fisher-growth") {
    append(s, {{"data", "n", ValueType::UInt, "500", "two-moons sample count", {}},
               {"data", "label_noise", ValueType::Real, "0.1", "probability of flipping each label", {}}});
    append(s, detail::mlp_keys("8,8", "tanh"));
    append(s, detail::train_keys("0.1", "32", "10000", "400"));
    append(s, {{"fisher", "damping", ValueType::Real, "0", "log-det damping; 0 selects 1e-8 tr(F)/k", {}}});
  } else if (experiment == "fig2-stability") {
    append(s, {{"data", "n", ValueType::UInt, "200", "two-moons sample count", {}}});
    append(s, detail::mlp_keys("16,16", "tanh"));
    append(s, detail::train_keys("0.1", "32", "5000", "100"));
    append(s, {{"stability", "swap_index", ValueType::Int, "-1", "row to replace; -1 draws one from the seed", {}}});
  } else if (experiment == "fig3-toy-mi") {
    append(s, {{"toy", "n", ValueType::UInt, "100", "observations per dataset", {}},
               {"toy", "mu_lo", ValueType::Real, "-1", "lower end of the dataset mean range", {}},
               {"toy", "mu_hi", ValueType::Real, "1", "upper end of the dataset mean range", {}},
               {"toy", "noise_sd", ValueType::Real, "1", "observation noise standard deviation", {}},
               {"toy", "c", ValueType::Real, "6", "frequency of phi", {}},
               {"pipeline", "batch_sizes", ValueType::UIntList, "5,10,25,100", "batch sizes to compare", {}},
               {"pipeline", "datasets", ValueType::UInt, "200", "datasets per batch size", {}},
               {"pipeline", "runs_per", ValueType::UInt, "1", "SGD runs per dataset", {}},
               {"pipeline", "init_lo", ValueType::Real, "-20", "lower end of the uniform initialization", {}},
               {"pipeline", "init_hi", ValueType::Real, "20", "upper end of the uniform initialization", {}},
               {"pipeline", "mi_samples", ValueType::UInt, "10000", "Monte-Carlo samples per mixture component", {}},
               {"pipeline", "iw_beta", ValueType::Real, "2", "beta of the Gaussian information in the weights", {}},
               {"pipeline", "lambda2_min", ValueType::Real, "0.01", "smallest prior variance", {}},
               {"pipeline", "lambda2_max", ValueType::Real, "1e6", "largest prior variance", {}},
               {"pipeline", "lambda2_points", ValueType::UInt, "161", "log-spaced prior variances", {}},
               {"pipeline", "stability", ValueType::Bool, "true", "estimate the Fisher approximation", {}},
               {"pipeline", "stability_delta", ValueType::Real, "1e-6", "dataset-mean perturbation", {}},
               {"pipeline", "hist_range", ValueType::Real, "60", "histogram covers [-range, range]", {}},
               {"pipeline", "hist_bins", ValueType::UInt, "120", "histogram bins", {}}});
    append(s, {{"train", "eta", ValueType::Real, "1", "step size", {}},
               {"train", "steps", ValueType::Int, "20000", "SGD steps", {}},
               {"train", "momentum", ValueType::Real, "0", "heavy-ball momentum in [0, 1)", {}},
               {"train", "weight_decay", ValueType::Real, "0", "L2 coefficient added to the gradient", {}}});
  } else if (experiment == "fig4-sweeps") {
    append(s, {{"data", "dim", ValueType::UInt, "10", "input dimension", {}},
               {"data", "per_class", ValueType::UInt, "50", "samples per class", {}}});
    append(s, detail::mlp_keys("32", "tanh"));
    append(s, {{"train", "eta", ValueType::Real, "0.1", "step size", {}},
               {"train", "steps", ValueType::Int, "2000", "SGD steps", {}},
               {"train", "momentum", ValueType::Real, "0", "heavy-ball momentum in [0, 1)", {}},
               {"train", "weight_decay", ValueType::Real, "0", "L2 coefficient added to the gradient", {}},
               {"sweep", "classes", ValueType::UIntList, "2,4,6,8,10", "class counts of the class sweep", {}},
               {"sweep", "batches", ValueType::UIntList, "8,32,128", "batch sizes of the batch sweep", {}},
               {"sweep", "base_batch", ValueType::UInt, "32", "batch size of the class sweep", {}},
               {"sweep", "base_classes", ValueType::UInt, "10", "class count of the batch sweep", {}},
               {"sweep", "seeds", ValueType::UInt, "10", "repetitions per point", {}},
               {"sweep", "fisher", ValueType::Enum, "exact", "trace estimator", {"exact", "mc"}},
               {"sweep", "mc_draws", ValueType::UInt, "8", "labels per input for the mc estimator", {}}});
  } else if (experiment == "kramers") {
    append(s, {{"landscape", "kind", ValueType::Enum, "double-well", "loss surface",
                {"double-well", "cosine", "curved-2d"}},
               {"landscape", "barrier", ValueType::Real, "0.25", "barrier height of the 1D wells", {}},
               {"landscape", "gamma", ValueType::Real, "0.5", "valley curvature of the 2D well", {}},
               {"escape", "start", ValueType::RealList, "-1", "local minimum the runs start from", {}},
               {"escape", "basin_lo", ValueType::RealList, "-3", "lower corner of the basin box", {}},
               {"escape", "basin_hi", ValueType::RealList, "0.5", "upper corner of the basin box", {}},
               {"escape", "target", ValueType::RealList, "", "neighbouring minimum for the 2D saddle search", {}},
               {"escape", "temperatures", ValueType::RealList, "0.05,0.04,0.03", "temperatures", {}},
               {"escape", "eta", ValueType::Real, "0.01", "Langevin step size", {}},
               {"escape", "runs", ValueType::UInt, "500", "runs per temperature", {}},
               {"escape", "max_steps", ValueType::Int, "100000000", "step cap per run", {}}});
  } else if (experiment == "effective-info") {
    append(s, {{"data", "n", ValueType::UInt, "200", "two-moons training samples", {}},
               {"data", "probes", ValueType::UInt, "64", "held-out probe inputs", {}}});
    append(s, detail::mlp_keys("3", "tanh"));
    append(s, detail::train_keys("0.5", "200", "2000", "2000"));
    append(s, {{"info", "layer", ValueType::UInt, "1", "layer of the activations; 0 is the input", {}},
               {"info", "betas", ValueType::RealList, "0.01,0.1,1,10", "perturbation scales", {}},
               {"info", "entropy_x", ValueType::Real, "nan", "input entropy in nats; nan omits it", {}},
               {"info", "mc_beta", ValueType::Real, "1e-8", "beta of the sampling check", {}},
               {"info", "mc_draws", ValueType::UInt, "10000", "perturbed forward passes in the sampling check", {}}});
  } else {
    throw ConfigError("unknown experiment '" + experiment + "'");
  }
  return s;
}

/// A schema-validated configuration; values keep their textual form.
class Config {
 public:
  Config() = default;

  const std::string& experiment() const { return experiment_; }
  const std::vector<KeySpec>& schema() const { return schema_; }

  const std::string& raw(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw ConfigError("no configuration key '" + name + "'");
    return it->second;
  }

  double real(const std::string& name) const { return parse_real(raw(name), name); }
  long integer(const std::string& name) const { return parse_int(raw(name), name); }
  std::size_t uinteger(const std::string& name) const { return parse_uint(raw(name), name); }
  bool boolean(const std::string& name) const { return parse_bool(raw(name), name); }
  const std::string& string(const std::string& name) const { return raw(name); }

  std::vector<double> reals(const std::string& name) const {
    std::vector<double> out;
    for (const auto& t : split_list(raw(name))) out.push_back(parse_real(t, name));
    return out;
  }
  std::vector<std::size_t> uintegers(const std::string& name) const {
    std::vector<std::size_t> out;
    for (const auto& t : split_list(raw(name))) out.push_back(parse_uint(t, name));
    return out;
  }

  Seed seed() const { return Seed{static_cast<std::uint64_t>(uinteger("seed"))}; }

  void set(const std::string& name, const std::string& value) {
    const KeySpec* spec = find(name);
    if (!spec) throw ConfigError("unknown key '" + name + "' for experiment " + experiment_);
    check(*spec, value);
    values_[name] = value;
  }

  /// Sections map keys to their textual values; top-level keys come first.
  Json to_json() const {
    Json j = Json::object();
    for (const auto& k : schema_) {
      if (k.section.empty()) {
        j[k.key] = values_.at(k.name());
      } else {
        if (!j.contains(k.section)) j[k.section] = Json::object();
        j[k.section][k.key] = values_.at(k.name());
      }
    }
    return j;
  }

  /// Fills defaults, rejects unknown keys and checks every value's type.
  static Config resolve(const std::map<std::string, std::string>& entries) {
    auto it = entries.find("experiment");
    if (it == entries.end()) throw ConfigError("missing top-level key 'experiment'");
    Config c;
    c.experiment_ = it->second;
    c.schema_ = schema_for(c.experiment_);
    for (const auto& [name, value] : entries)
      if (!c.find(name)) throw ConfigError("unknown key '" + name + "' for experiment " + c.experiment_);
    for (const auto& k : c.schema_) {
      auto e = entries.find(k.name());
      c.set(k.name(), e == entries.end() ? k.fallback : e->second);
    }
    return c;
  }

  static Config from_json(const Json& j) {
    if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
    std::map<std::string, std::string> entries;
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        for (const auto& [k2, v2] : value.items()) entries[key + "." + k2] = scalar_text(v2, key + "." + k2);
      } else {
        entries[key] = scalar_text(value, key);
      }
    }
    return resolve(entries);
  }

  static std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, ',')) {
      const auto t = trim(cur);
      if (!t.empty()) out.push_back(t);
    }
    return out;
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

 private:
  const KeySpec* find(const std::string& name) const {
    for (const auto& k : schema_)
      if (k.name() == name) return &k;
    return nullptr;
  }

  static std::string scalar_text(const Json& v, const std::string& name) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
    if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
    if (v.is_number_float()) return format_double(v.get<double>());
    throw ConfigError("key '" + name + "' must be a scalar");
  }

  static double parse_real(const std::string& s, const std::string& name) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    try {
      return parse_double(s);
    } catch (const std::exception&) {
      throw ConfigError("key '" + name + "' expects a real, got '" + s + "'");
    }
  }

  static long parse_int(const std::string& s, const std::string& name) {
    long v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty())
      throw ConfigError("key '" + name + "' expects an integer, got '" + s + "'");
    return v;
  }

  static std::size_t parse_uint(const std::string& s, const std::string& name) {
    std::size_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty())
      throw ConfigError("key '" + name + "' expects a non-negative integer, got '" + s + "'");
    return v;
  }

  static bool parse_bool(const std::string& s, const std::string& name) {
    if (s == "true") return true;
    if (s == "false") return false;
    throw ConfigError("key '" + name + "' expects true or false, got '" + s + "'");
  }

  static void check(const KeySpec& k, const std::string& v) {
    const auto name = k.name();
    switch (k.type) {
      case ValueType::Real: parse_real(v, name); break;
      case ValueType::Int: parse_int(v, name); break;
      case ValueType::UInt: parse_uint(v, name); break;
      case ValueType::Bool: parse_bool(v, name); break;
      case ValueType::String: break;
      case ValueType::Enum:
        if (std::find(k.choices.begin(), k.choices.end(), v) == k.choices.end())
          throw ConfigError("key '" + name + "' has invalid value '" + v + "'");
        break;
      case ValueType::RealList:
        for (const auto& t : split_list(v)) parse_real(t, name);
        break;
      case ValueType::UIntList:
        for (const auto& t : split_list(v)) parse_uint(t, name);
        break;
    }
  }

  std::string experiment_;
  std::vector<KeySpec> schema_;
  std::map<std::string, std::string> values_;
};

/// `key = value` lines; `[section]` prefixes later keys with `section.`;
/// `#` and `;` start comments; a key may appear once.
inline std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.resize(hash);
    line = Config::trim(line);
    if (line.empty()) continue;
    const auto where = " on line " + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("unterminated section header" + where);
      section = Config::trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError("empty section name" + where);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value'" + where);
    const auto key = Config::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("empty key" + where);
    const auto name = section.empty() ? key : section + "." + key;
    if (!out.emplace(name, Config::trim(line.substr(eq + 1))).second)
      throw ConfigError("duplicate key '" + name + "'" + where);
  }
  return out;
}

inline Config parse_config(const std::string& text) { return Config::resolve(parse_config_text(text)); }

}  // namespace nninfo::harness
