#pragma once

// Run configuration: a JSON document naming the model, its parameter and
// covariate bindings, an optional alias table, distribution tables and
// per-command settings.
//
//   {
//     "model": "y = Ber(1/2) | ScOdds(1+age) | ...",
//     "aliases": {"f1.intercept": "alpha0", "f2.trt1": "beta"},
//     "params": {"alpha0": 0.0, "f1.age": 0.0, "beta": 0.18},
//     "covariates": {"age": 40, "trt1": 1},
//     "distributions": [
//       {"covariate": "trt2",
//        "table": [{"context": {"trt1": 0}, "value": 1, "probability": 0.4}, ...]}
//     ],
//     "effect": {"target": "trt1", "low": 0, "high": 1, "measure": "RR"},
//     "marginalize": {"over": "trt2"},
//     "recovery": {"eta1": 1, "beta": 0.18, "gamma": -0.1, "pi0": 0.4, "pi1": 0.6},
//     "orderings": {"anchors": [[1, 1.2, 0.8]]}
//   }

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "flowcalc/dsl.hpp"
#include "flowcalc/engine.hpp"
#include "flowcalc/marginal.hpp"

namespace flowcalc {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kConfigDirEnv = "FLOWCALC_CONFIG_DIR";

struct DistributionConfig {
  std::string covariate;
  std::vector<DistributionEntry> table;
};

struct RunConfig {
  std::string model;
  std::map<std::string, double> params;  // canonical names or aliases
  std::map<std::string, std::string> aliases;  // canonical -> display
  CovariateEnv covariates;
  std::vector<DistributionConfig> distributions;
  nlohmann::json effect = nlohmann::json::object();
  nlohmann::json marginalize = nlohmann::json::object();
  nlohmann::json recovery = nlohmann::json::object();
  nlohmann::json orderings = nlohmann::json::object();

  std::optional<CovariateDistribution> distribution_for(const std::string& covariate) const {
    for (const auto& d : distributions) {
      if (d.covariate == covariate) return CovariateDistribution::from_table(d.covariate, d.table);
    }
    return std::nullopt;
  }
};

namespace detail {

inline std::map<std::string, double> number_map(const nlohmann::json& j, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be an object of numbers");
  std::map<std::string, double> out;
  for (const auto& [key, value] : j.items()) {
    if (!value.is_number()) throw ConfigError(std::string(what) + "." + key + " must be a number");
    out[key] = value.get<double>();
  }
  return out;
}

inline const nlohmann::json& object_section(const nlohmann::json& j, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be an object");
  return j;
}

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("configuration must be a JSON object");
  RunConfig config;
  for (const auto& [key, value] : doc.items()) {
    if (key == "model") {
      if (!value.is_string()) throw ConfigError("model must be a string");
      config.model = value.get<std::string>();
    } else if (key == "params") {
      config.params = detail::number_map(value, "params");
    } else if (key == "covariates") {
      for (const auto& [k, v] : detail::number_map(value, "covariates")) config.covariates[k] = v;
    } else if (key == "aliases") {
      if (!value.is_object()) throw ConfigError("aliases must be an object of strings");
      for (const auto& [k, v] : value.items()) {
        if (!v.is_string()) throw ConfigError("aliases." + k + " must be a string");
        config.aliases[k] = v.get<std::string>();
      }
    } else if (key == "distributions") {
      if (!value.is_array()) throw ConfigError("distributions must be an array");
      for (const auto& d : value) {
        DistributionConfig dist;
        if (!d.contains("covariate") || !d["covariate"].is_string()) {
          throw ConfigError("each distribution needs a covariate name");
        }
        dist.covariate = d["covariate"].get<std::string>();
        if (!d.contains("table") || !d["table"].is_array()) {
          throw ConfigError("distribution of '" + dist.covariate + "' needs a table array");
        }
        for (const auto& row : d["table"]) {
          DistributionEntry entry;
          if (row.contains("context")) {
            for (const auto& [k, v] : detail::number_map(row["context"], "context")) entry.context[k] = v;
          }
          if (!row.contains("value") || !row["value"].is_number() || !row.contains("probability") ||
              !row["probability"].is_number()) {
            throw ConfigError("distribution rows need numeric value and probability");
          }
          entry.value = row["value"].get<double>();
          entry.probability = row["probability"].get<double>();
          dist.table.push_back(std::move(entry));
        }
        config.distributions.push_back(std::move(dist));
      }
    } else if (key == "effect") {
      config.effect = detail::object_section(value, "effect");
    } else if (key == "marginalize") {
      config.marginalize = detail::object_section(value, "marginalize");
    } else if (key == "recovery") {
      config.recovery = detail::object_section(value, "recovery");
    } else if (key == "orderings") {
      config.orderings = detail::object_section(value, "orderings");
    } else {
      throw ConfigError("unknown configuration key '" + key + "'");
    }
  }
  return config;
}

/// Relative paths that do not exist are looked up under $FLOWCALC_CONFIG_DIR.
inline std::filesystem::path resolve_config_path(const std::filesystem::path& path) {
  if (path.is_relative() && !std::filesystem::exists(path)) {
    if (const char* dir = std::getenv(kConfigDirEnv); dir != nullptr && *dir != '\0') {
      const auto candidate = std::filesystem::path(dir) / path;
      if (std::filesystem::exists(candidate)) return candidate;
    }
  }
  return path;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  const auto resolved = resolve_config_path(path);
  std::ifstream in(resolved);
  if (!in) throw ConfigError("cannot read configuration '" + resolved.string() + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("configuration '" + resolved.string() + "' is not valid JSON: " + e.what());
  }
  return config_from_json(doc);
}

/// Canonical parameter name for a canonical name or alias, if it is one.
inline std::optional<std::string> canonical_parameter(const ModelSpec& spec, const RunConfig& config,
                                                      const std::string& name) {
  for (const auto& p : parameter_names(spec)) {
    if (p == name) return p;
  }
  for (const auto& [canonical, alias] : config.aliases) {
    if (alias == name) return canonical;
  }
  return std::nullopt;
}

/// Aliases must map canonical parameters of the spec to distinct identifiers
/// that do not shadow parameters or covariates.
inline void check_aliases(const ModelSpec& spec, const RunConfig& config) {
  const auto params = parameter_names(spec);
  const auto covs = covariate_names(spec);
  std::map<std::string, std::string> seen;
  for (const auto& [canonical, alias] : config.aliases) {
    if (std::find(params.begin(), params.end(), canonical) == params.end()) {
      throw BindingError("alias for unknown parameter '" + canonical + "'");
    }
    if (!is_identifier(alias)) throw BindingError("alias '" + alias + "' is not an identifier");
    if (std::find(params.begin(), params.end(), alias) != params.end() ||
        std::find(covs.begin(), covs.end(), alias) != covs.end()) {
      throw BindingError("alias '" + alias + "' shadows a model name");
    }
    if (const auto [it, inserted] = seen.emplace(alias, canonical); !inserted) {
      throw BindingError("alias '" + alias + "' used for both '" + it->second + "' and '" +
                         canonical + "'");
    }
  }
}

struct Bindings {
  ParamEnv params;
  CovariateEnv covariates;
};

/// Resolves the config's parameter names (aliases allowed) to canonical ones.
inline Bindings resolve_bindings(const ModelSpec& spec, const RunConfig& config) {
  check_aliases(spec, config);
  Bindings b;
  for (const auto& [name, value] : config.params) {
    const auto canonical = canonical_parameter(spec, config, name);
    if (!canonical) throw BindingError("'" + name + "' is not a parameter of the model");
    if (!b.params.emplace(*canonical, value).second) {
      throw BindingError("parameter '" + *canonical + "' bound twice");
    }
  }
  b.covariates = config.covariates;
  return b;
}

/// Binds `name` as a parameter (canonical or alias) or a covariate of the spec.
/// Returns false when the name is neither.
inline bool assign(const ModelSpec& spec, const RunConfig& config, Bindings& b,
                   const std::string& name, double value) {
  if (const auto canonical = canonical_parameter(spec, config, name)) {
    b.params[*canonical] = value;
    return true;
  }
  if (references_covariate(spec, name)) {
    b.covariates[name] = value;
    return true;
  }
  return false;
}

}  // namespace flowcalc
