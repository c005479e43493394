#pragma once

// Experiment configuration: a TOML document with the sections dataset, split,
// training, strategy, ablation and output. Every key has a default; unknown
// keys are rejected. Overrides use dotted `section.key=value` syntax.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include "eoal/common.hpp"
#include "eoal/finch.hpp"
#include "eoal/io.hpp"
#include "eoal/samplers.hpp"

namespace eoal {

struct DatasetSpec {
  std::string kind = "blobs";  // blobs | csv
  std::string path;            // csv only
  int n_classes = 10;
  int per_class = 500;
  int dim = 16;
  double radius = 10.0;
  double sigma = 1.0;
  std::int64_t seed = 1;
};

struct SplitSpec {
  double mismatch_ratio = 0.4;
  double initial_label_fraction = 0.02;
  double test_fraction = 0.2;
  std::vector<std::int64_t> seeds{0};
};

struct TrainingSpec {
  int epochs = 60;
  int batch_size = 64;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.005;
  double step_decay_factor = 0.5;
  int step_decay_every = 20;
  std::vector<std::int64_t> hidden{64, 32};
  double lambda = 0.1;
  double beta = 0.1;
  double temperature = 1.0;
  bool warm_start = false;
  // Rescale every feature to zero mean, unit variance before training.
  bool standardize_inputs = true;
};

struct StrategySpec {
  std::string name = "eoal";
  int cycles = 5;
  int budget = 100;
  std::string cluster_domain = "predicted_known";
  std::string metric = "euclidean";
};

/// Component switches for the ablation variants. All true/false defaults give
/// the full method.
struct AblationFlags {
  bool use_s_c = true;
  bool use_s_d = true;
  bool use_d_au = true;
  bool use_diversity = true;
  bool use_bc = true;
  bool diversity_only = false;
  bool use_target_model = true;
};

struct OutputSpec {
  bool dump_scores = false;
  // Off by default so that rounds.csv is byte-identical across runs.
  bool record_timing = false;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  SplitSpec split;
  TrainingSpec training;
  StrategySpec strategy;
  AblationFlags ablation;
  OutputSpec output;

  samplers::Strategy strategy_kind() const { return samplers::parse_strategy(strategy.name); }
  finch::Metric metric() const { return finch::parse_metric(strategy.metric); }
  samplers::ClusterDomain cluster_domain() const { return samplers::parse_cluster_domain(strategy.cluster_domain); }

  void validate() const {
    auto require = [](bool ok, const std::string& msg) {
      if (!ok) throw ConfigError(msg);
    };
    require(dataset.kind == "blobs" || dataset.kind == "csv", "dataset.kind must be blobs or csv");
    require(dataset.kind != "csv" || !dataset.path.empty(), "dataset.path is required for csv datasets");
    require(split.mismatch_ratio > 0.0 && split.mismatch_ratio < 1.0, "split.mismatch_ratio must be in (0,1)");
    require(split.initial_label_fraction > 0.0 && split.initial_label_fraction < 1.0,
            "split.initial_label_fraction must be in (0,1)");
    require(split.test_fraction > 0.0 && split.test_fraction < 1.0, "split.test_fraction must be in (0,1)");
    require(!split.seeds.empty(), "split.seeds must list at least one seed");
    require(training.epochs >= 1, "training.epochs must be >= 1");
    require(training.batch_size >= 1, "training.batch_size must be >= 1");
    require(training.learning_rate > 0.0, "training.learning_rate must be > 0");
    require(training.momentum >= 0.0 && training.momentum < 1.0, "training.momentum must be in [0,1)");
    require(training.weight_decay >= 0.0, "training.weight_decay must be >= 0");
    require(training.step_decay_factor > 0.0, "training.step_decay_factor must be > 0");
    require(!training.hidden.empty(), "training.hidden must list at least one layer width");
    for (const auto h : training.hidden) require(h >= 1, "training.hidden widths must be >= 1");
    require(training.lambda >= 0.0 && training.beta >= 0.0, "training.lambda and training.beta must be >= 0");
    require(training.temperature > 0.0, "training.temperature must be > 0");
    require(strategy.cycles >= 1, "strategy.cycles must be >= 1");
    require(strategy.budget >= 1, "strategy.budget must be >= 1");
    (void)strategy_kind();
    (void)metric();
    (void)cluster_domain();
    require(!ablation.diversity_only || ablation.use_diversity, "ablation.diversity_only requires use_diversity");
    require(ablation.use_s_c || ablation.use_s_d || ablation.diversity_only,
            "ablation: at least one of use_s_c, use_s_d must be enabled");
  }
};

namespace config_detail {

struct Field {
  std::string section;
  std::string key;
  std::function<void(toml::table&)> write;
  std::function<void(const toml::node&)> read;
};

template <typename T>
T node_as(const toml::node& node, const std::string& name);

template <>
inline bool node_as<bool>(const toml::node& node, const std::string& name) {
  if (auto v = node.value_exact<bool>()) return *v;
  throw ConfigError(name + ": expected a boolean");
}

template <>
inline std::int64_t node_as<std::int64_t>(const toml::node& node, const std::string& name) {
  if (auto v = node.value_exact<std::int64_t>()) return *v;
  throw ConfigError(name + ": expected an integer");
}

template <>
inline int node_as<int>(const toml::node& node, const std::string& name) {
  return static_cast<int>(node_as<std::int64_t>(node, name));
}

template <>
inline double node_as<double>(const toml::node& node, const std::string& name) {
  if (auto v = node.value_exact<double>()) return *v;
  if (auto v = node.value_exact<std::int64_t>()) return static_cast<double>(*v);
  throw ConfigError(name + ": expected a number");
}

template <>
inline std::string node_as<std::string>(const toml::node& node, const std::string& name) {
  if (auto v = node.value_exact<std::string>()) return *v;
  throw ConfigError(name + ": expected a string");
}

template <>
inline std::vector<std::int64_t> node_as<std::vector<std::int64_t>>(const toml::node& node, const std::string& name) {
  const auto* arr = node.as_array();
  if (arr == nullptr) throw ConfigError(name + ": expected an array of integers");
  std::vector<std::int64_t> out;
  for (const auto& el : *arr) out.push_back(node_as<std::int64_t>(el, name));
  return out;
}

template <typename T>
void insert_value(toml::table& t, const std::string& key, const T& v) {
  if constexpr (std::is_same_v<T, std::vector<std::int64_t>>) {
    toml::array arr;
    for (const auto x : v) arr.push_back(x);
    t.insert_or_assign(key, std::move(arr));
  } else if constexpr (std::is_same_v<T, int>) {
    t.insert_or_assign(key, static_cast<std::int64_t>(v));
  } else {
    t.insert_or_assign(key, v);
  }
}

template <typename T>
Field make_field(std::string section, std::string key, T& ref) {
  const auto name = section + "." + key;
  return Field{section, key,
               [key, &ref](toml::table& t) { insert_value(t, key, ref); },
               [name, &ref](const toml::node& n) { ref = node_as<T>(n, name); }};
}

inline std::vector<Field> fields(ExperimentConfig& c) {
  return {
      make_field("dataset", "kind", c.dataset.kind),
      make_field("dataset", "path", c.dataset.path),
      make_field("dataset", "n_classes", c.dataset.n_classes),
      make_field("dataset", "per_class", c.dataset.per_class),
      make_field("dataset", "dim", c.dataset.dim),
      make_field("dataset", "radius", c.dataset.radius),
      make_field("dataset", "sigma", c.dataset.sigma),
      make_field("dataset", "seed", c.dataset.seed),
      make_field("split", "mismatch_ratio", c.split.mismatch_ratio),
      make_field("split", "initial_label_fraction", c.split.initial_label_fraction),
      make_field("split", "test_fraction", c.split.test_fraction),
      make_field("split", "seeds", c.split.seeds),
      make_field("training", "epochs", c.training.epochs),
      make_field("training", "batch_size", c.training.batch_size),
      make_field("training", "learning_rate", c.training.learning_rate),
      make_field("training", "momentum", c.training.momentum),
      make_field("training", "weight_decay", c.training.weight_decay),
      make_field("training", "step_decay_factor", c.training.step_decay_factor),
      make_field("training", "step_decay_every", c.training.step_decay_every),
      make_field("training", "hidden", c.training.hidden),
      make_field("training", "lambda", c.training.lambda),
      make_field("training", "beta", c.training.beta),
      make_field("training", "temperature", c.training.temperature),
      make_field("training", "warm_start", c.training.warm_start),
      make_field("training", "standardize_inputs", c.training.standardize_inputs),
      make_field("strategy", "name", c.strategy.name),
      make_field("strategy", "cycles", c.strategy.cycles),
      make_field("strategy", "budget", c.strategy.budget),
      make_field("strategy", "cluster_domain", c.strategy.cluster_domain),
      make_field("strategy", "metric", c.strategy.metric),
      make_field("ablation", "use_s_c", c.ablation.use_s_c),
      make_field("ablation", "use_s_d", c.ablation.use_s_d),
      make_field("ablation", "use_d_au", c.ablation.use_d_au),
      make_field("ablation", "use_diversity", c.ablation.use_diversity),
      make_field("ablation", "use_bc", c.ablation.use_bc),
      make_field("ablation", "diversity_only", c.ablation.diversity_only),
      make_field("ablation", "use_target_model", c.ablation.use_target_model),
      make_field("output", "dump_scores", c.output.dump_scores),
      make_field("output", "record_timing", c.output.record_timing),
  };
}

inline toml::table parse_toml(std::string_view text, const std::string& source) {
  try {
    return toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source << ":" << e.source().begin.line << ": " << e.description();
    throw ConfigError(msg.str());
  }
}

}  // namespace config_detail

/// Applies every key of `doc` on top of `cfg`. Unknown sections or keys are
/// configuration errors.
inline void apply_table(ExperimentConfig& cfg, const toml::table& doc) {
  auto fields = config_detail::fields(cfg);
  for (const auto& [section_key, section_node] : doc) {
    const std::string section(section_key.str());
    const auto* section_table = section_node.as_table();
    if (section_table == nullptr) throw ConfigError("config: top-level key '" + section + "' must be a [section]");
    for (const auto& [key, node] : *section_table) {
      const std::string k(key.str());
      auto it = std::find_if(fields.begin(), fields.end(),
                             [&](const auto& f) { return f.section == section && f.key == k; });
      if (it == fields.end()) throw ConfigError("config: unknown key " + section + "." + k);
      it->read(node);
    }
  }
}

inline ExperimentConfig parse_config(std::string_view text, const std::string& source = "config") {
  ExperimentConfig cfg;
  apply_table(cfg, config_detail::parse_toml(text, source));
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_config(io::read_file(path), path.string());
}

/// Applies one `key=value` override. Keys are `section.key`; a bare key is
/// accepted when it names exactly one field, and `strategy` is shorthand for
/// `strategy.name`. Values are TOML literals; anything that does not parse as
/// one is taken as a bare string.
inline void apply_override(ExperimentConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  }
  std::string key(assignment.substr(0, eq));
  const std::string value(assignment.substr(eq + 1));
  if (key == "strategy") key = "strategy.name";

  auto fields = config_detail::fields(cfg);
  std::string section;
  std::string name;
  if (const auto dot = key.find('.'); dot != std::string::npos) {
    section = key.substr(0, dot);
    name = key.substr(dot + 1);
  } else {
    std::vector<const config_detail::Field*> matches;
    for (const auto& f : fields) {
      if (f.key == key) matches.push_back(&f);
    }
    if (matches.size() != 1) {
      throw ConfigError("override key '" + key + "' is " + (matches.empty() ? "unknown" : "ambiguous"));
    }
    section = matches.front()->section;
    name = key;
  }

  toml::table parsed;
  try {
    parsed = toml::parse("v = " + value);
  } catch (const toml::parse_error&) {
    parsed.insert_or_assign("v", value);
  }
  toml::table doc;
  doc.insert_or_assign(section, toml::table{});
  doc[section].as_table()->insert_or_assign(name, *parsed.get("v"));
  apply_table(cfg, doc);
}

inline toml::table to_table(const ExperimentConfig& cfg) {
  auto copy = cfg;
  toml::table doc;
  for (auto& f : config_detail::fields(copy)) {
    if (!doc.contains(f.section)) doc.insert_or_assign(f.section, toml::table{});
    f.write(*doc[f.section].as_table());
  }
  return doc;
}

inline std::string to_toml(const ExperimentConfig& cfg) {
  std::ostringstream ss;
  ss << to_table(cfg) << '\n';
  return ss.str();
}

}  // namespace eoal
