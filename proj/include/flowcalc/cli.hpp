#pragma once

// Command implementations behind the flowcalc executable. Each command writes
// data (JSON or CSV) to `out`, diagnostics to `err`, and returns the process
// exit code:
//   0 ok, 1 usage / configuration / I/O, 2 model parse error, 3 binding error,
//   4 invalid evaluation, 5 effect, 6 marginalize, 7 check-recovery,
//   8 orderings.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "flowcalc/config.hpp"
#include "flowcalc/dsl.hpp"
#include "flowcalc/engine.hpp"
#include "flowcalc/marginal.hpp"
#include "flowcalc/measures.hpp"
#include "flowcalc/orderings.hpp"

namespace flowcalc::cli {

using Json = nlohmann::ordered_json;

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kParse = 2,
  kBinding = 3,
  kInvalidEvaluation = 4,
  kEffect = 5,
  kMarginal = 6,
  kRecovery = 7,
  kOrderings = 8,
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct VarySpec {
  std::string name;
  double start = 0.0;
  double stop = 0.0;
  double step = 1.0;

  std::size_t count() const {
    return static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
  }
  double value(std::size_t i) const { return start + static_cast<double>(i) * step; }
};

struct Invocation {
  RunConfig config;
  std::vector<std::pair<std::string, double>> sets;  // --set name=value, in order
  std::vector<VarySpec> vary;
  std::optional<std::string> out_path;
  std::optional<int> grid_size;
  std::optional<double> tolerance;
  std::uint64_t seed = 1;
  std::optional<std::size_t> samples;  // check-recovery: run the randomized suite
};

inline double parse_number(const std::string& text, const std::string& what) {
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw UsageError("malformed number '" + text + "' in " + what);
  return value;
}

/// name=value
inline std::pair<std::string, double> parse_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("expected name=value, got '" + text + "'");
  return {text.substr(0, eq), parse_number(text.substr(eq + 1), "'" + text + "'")};
}

/// name=start:stop:step
inline VarySpec parse_vary(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw UsageError("expected name=start:stop:step, got '" + text + "'");
  }
  VarySpec v;
  v.name = text.substr(0, eq);
  const std::string range = text.substr(eq + 1);
  const auto c1 = range.find(':');
  const auto c2 = c1 == std::string::npos ? std::string::npos : range.find(':', c1 + 1);
  if (c2 == std::string::npos) throw UsageError("expected name=start:stop:step, got '" + text + "'");
  v.start = parse_number(range.substr(0, c1), "'" + text + "'");
  v.stop = parse_number(range.substr(c1 + 1, c2 - c1 - 1), "'" + text + "'");
  v.step = parse_number(range.substr(c2 + 1), "'" + text + "'");
  if (!(v.step > 0.0)) throw UsageError("sweep step must be positive in '" + text + "'");
  if (!(v.start <= v.stop)) throw UsageError("sweep start must not exceed stop in '" + text + "'");
  return v;
}

/// 17 significant digits, so printed values read back to the same double.
inline std::string format_number(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace detail {

inline ModelSpec model_of(const Invocation& inv) {
  if (inv.config.model.empty()) throw UsageError("no model given (use --model or a config file)");
  return parse(inv.config.model);
}

inline Bindings bindings_of(const ModelSpec& spec, const Invocation& inv) {
  Bindings b = resolve_bindings(spec, inv.config);
  for (const auto& [name, value] : inv.sets) {
    if (!assign(spec, inv.config, b, name, value)) {
      throw BindingError("'" + name + "' is neither a parameter nor a covariate of the model");
    }
  }
  return b;
}

inline void emit(std::ostream& out, const Json& j) { out << j.dump(2) << '\n'; }

inline Json env_json(const std::map<std::string, double, std::less<>>& env) {
  Json j = Json::object();
  for (const auto& [k, v] : env) j[k] = v;
  return j;
}

inline Json eval_json(const ModelSpec& spec, const EvalResult& r) {
  Json j;
  j["model"] = pretty_print(spec);
  j["probability"] = r.probability;
  j["valid"] = r.valid;
  j["first_invalid_stage"] = r.first_invalid_stage();
  Json stages = Json::array();
  for (const auto& s : r.stages) {
    const auto& flow = spec.flows[static_cast<std::size_t>(s.position - 1)];
    stages.push_back({{"position", s.position},
                      {"flow", std::string(to_string(flow.kind)) + "(" + to_string(flow.predictor) + ")"},
                      {"eta", s.eta},
                      {"probability", s.probability},
                      {"valid", s.valid}});
  }
  j["stages"] = std::move(stages);
  return j;
}

template <typename Fn>
int guarded(std::ostream& err, int module_code, Fn&& body) {
  try {
    return body();
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return kParse;
  } catch (const BindingError& e) {
    err << "binding error: " << e.what() << '\n';
    return kBinding;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return module_code;
  }
}

inline double number_field(const Json& section, const char* key, std::optional<double> fallback,
                           const char* where) {
  if (section.contains(key)) {
    if (!section[key].is_number()) throw ConfigError(std::string(where) + "." + key + " must be a number");
    return section[key].get<double>();
  }
  if (!fallback) throw ConfigError(std::string(where) + "." + key + " is required");
  return *fallback;
}

}  // namespace detail

inline int cmd_eval(const Invocation& inv, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, kInvalidEvaluation, [&] {
    const auto spec = detail::model_of(inv);
    const auto b = detail::bindings_of(spec, inv);
    const auto result = evaluate(spec, b.params, b.covariates);
    detail::emit(out, detail::eval_json(spec, result));
    if (!result.valid) {
      err << "invalid evaluation: stage " << result.first_invalid_stage()
          << " left [0,1]\n";
      return static_cast<int>(kInvalidEvaluation);
    }
    return static_cast<int>(kOk);
  });
}

/// Writes one CSV row per grid point in odometer order (last --vary fastest):
/// the varied values, the probability and the validity flag.
inline int cmd_sweep(const Invocation& inv, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, kInvalidEvaluation, [&] {
    const auto spec = detail::model_of(inv);
    const auto fixed = detail::bindings_of(spec, inv);

    std::vector<std::string> targets;  // canonical parameter, or covariate name
    std::vector<bool> is_param;
    for (const auto& v : inv.vary) {
      for (const auto& other : targets) {
        if (other == v.name) throw UsageError("'" + v.name + "' varied twice");
      }
      if (const auto canonical = canonical_parameter(spec, inv.config, v.name)) {
        if (fixed.params.contains(*canonical)) {
          throw UsageError("'" + v.name + "' is both varied and fixed");
        }
        for (std::size_t i = 0; i < targets.size(); ++i) {
          if (is_param[i] && targets[i] == *canonical) {
            throw UsageError("'" + v.name + "' varied twice");
          }
        }
        targets.push_back(*canonical);
        is_param.push_back(true);
      } else if (references_covariate(spec, v.name)) {
        if (fixed.covariates.contains(v.name)) {
          throw UsageError("'" + v.name + "' is both varied and fixed");
        }
        targets.push_back(v.name);
        is_param.push_back(false);
      } else {
        throw BindingError("'" + v.name + "' is neither a parameter nor a covariate of the model");
      }
    }

    std::ostringstream csv;
    for (const auto& v : inv.vary) csv << v.name << ',';
    csv << "probability,valid\n";

    std::vector<std::size_t> counts;
    std::size_t rows = 1;
    for (const auto& v : inv.vary) {
      counts.push_back(v.count());
      rows *= counts.back();
    }
    if (rows == 0) throw UsageError("empty sweep grid");

    std::vector<std::size_t> digits(inv.vary.size(), 0);
    for (std::size_t row = 0; row < rows; ++row) {
      Bindings b = fixed;
      for (std::size_t d = 0; d < inv.vary.size(); ++d) {
        const double value = inv.vary[d].value(digits[d]);
        if (is_param[d]) {
          b.params[targets[d]] = value;
        } else {
          b.covariates[targets[d]] = value;
        }
        csv << format_number(value) << ',';
      }
      try {
        const auto r = evaluate(spec, b.params, b.covariates);
        csv << format_number(r.probability) << ',' << (r.valid ? "true" : "false") << '\n';
      } catch (const EvaluationError& e) {
        err << "row " << row + 1 << ": " << e.what() << '\n';
        csv << "nan,false\n";
      }
      for (std::size_t d = inv.vary.size(); d-- > 0;) {
        if (++digits[d] < counts[d]) break;
        digits[d] = 0;
      }
    }

    if (inv.out_path) {
      std::ofstream file(*inv.out_path, std::ios::binary | std::ios::trunc);
      if (!file) throw UsageError("cannot write '" + *inv.out_path + "'");
      file << csv.str();
      if (!file.flush()) throw UsageError("failed writing '" + *inv.out_path + "'");
    } else {
      out << csv.str();
    }
    return static_cast<int>(kOk);
  });
}

inline int cmd_effect(const Invocation& inv, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, kEffect, [&] {
    const auto spec = detail::model_of(inv);
    const auto b = detail::bindings_of(spec, inv);
    const auto& section = inv.config.effect;
    if (!section.contains("target") || !section["target"].is_string()) {
      throw ConfigError("effect.target is required");
    }
    EffectQuery query;
    query.target = section["target"].get<std::string>();
    query.low = detail::number_field(section, "low", 0.0, "effect");
    query.high = detail::number_field(section, "high", 1.0, "effect");
    const std::string measure = section.value("measure", std::string("RR"));
    const auto m = measure_from_string(measure);
    if (!m) throw ConfigError("effect.measure must be RR, SR or OR");
    query.measure = *m;
    query.context = b.covariates;
    query.context.erase(query.target);  // the contrast sets it

    const auto report = effect(spec, b.params, query);
    Json j;
    j["model"] = pretty_print(spec);
    j["target"] = query.target;
    j["measure"] = measure;
    j["low"] = query.low;
    j["high"] = query.high;
    j["context"] = detail::env_json(query.context);
    j["value"] = report.value;
    j["valid"] = report.valid;
    j["p_low"] = report.p_low;
    j["p_high"] = report.p_high;
    j["low_valid"] = report.low_valid;
    j["high_valid"] = report.high_valid;
    detail::emit(out, j);
    if (!report.valid) {
      err << "effect is undefined: an endpoint is invalid or the denominator is zero\n";
      return static_cast<int>(kEffect);
    }
    return static_cast<int>(kOk);
  });
}

inline int cmd_marginalize(const Invocation& inv, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, kMarginal, [&] {
    const auto spec = detail::model_of(inv);
    const auto b = detail::bindings_of(spec, inv);
    const auto& section = inv.config.marginalize;
    if (!section.contains("over") || !section["over"].is_string()) {
      throw ConfigError("marginalize.over is required");
    }
    const auto over = section["over"].get<std::string>();
    const auto dist = inv.config.distribution_for(over);
    if (!dist) throw ConfigError("no distribution table for '" + over + "'");

    const double p = marginalize(spec, b.params, *dist, b.covariates);
    Json j;
    j["model"] = pretty_print(spec);
    j["over"] = over;
    j["context"] = detail::env_json(b.covariates);
    Json weights = Json::array();
    const auto w = dist->weights(b.covariates);
    for (std::size_t i = 0; i < w.size(); ++i) {
      weights.push_back({{"value", dist->support()[i]}, {"probability", w[i]}});
    }
    j["distribution"] = std::move(weights);
    j["probability"] = p;
    detail::emit(out, j);
    return static_cast<int>(kOk);
  });
}

inline Json recovery_json(const RecoveryReport& r) {
  Json j;
  j["lhs_rr"] = r.lhs_rr;
  j["target"] = r.target;
  j["condition_value"] = r.condition_value;
  j["condition_holds"] = r.condition_holds;
  j["rr_matches"] = r.rr_matches;
  j["marginal_trt1_0"] = r.marginal_untreated;
  j["marginal_trt1_1"] = r.marginal_treated;
  return j;
}

/// Single configuration from the "recovery" section (overridable with
/// --set eta1=... etc.), or with --samples N the randomized equivalence suite.
inline int cmd_check_recovery(const Invocation& inv, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, kRecovery, [&] {
    Json section = inv.config.recovery;
    for (const auto& [name, value] : inv.sets) {
      if (name != "eta1" && name != "beta" && name != "gamma" && name != "pi0" && name != "pi1" &&
          name != "condition_tolerance" && name != "rr_tolerance") {
        throw UsageError("check-recovery does not accept '" + name + "'");
      }
      section[name] = value;
    }
    RecoveryTolerances tol;
    tol.condition = detail::number_field(section, "condition_tolerance", tol.condition, "recovery");
    tol.rr = detail::number_field(section, "rr_tolerance", tol.rr, "recovery");

    if (inv.samples) {
      const std::size_t balanced = static_cast<std::size_t>(
          detail::number_field(section, "balanced_samples", static_cast<double>(*inv.samples / 10), "recovery"));
      const auto suite = recovery_equivalence_suite(*inv.samples, balanced, inv.seed, tol);
      Json j;
      j["seed"] = inv.seed;
      j["random_checked"] = suite.random_checked;
      j["balanced_checked"] = suite.balanced_checked;
      j["agreements"] = suite.agreements;
      j["balanced_rr_matches"] = suite.balanced_rr_matches;
      j["redrawn_infeasible"] = suite.redrawn_infeasible;
      j["redrawn_dust"] = suite.redrawn_dust;
      j["balanced_rejected"] = suite.balanced_rejected;
      j["all_agree"] = suite.all_agree();
      Json bad = Json::array();
      for (const auto& [c, r] : suite.disagreements) {
        Json row = recovery_json(r);
        row["eta1"] = c.eta1;
        row["beta"] = c.beta;
        row["gamma"] = c.gamma;
        row["pi0"] = c.pi0;
        row["pi1"] = c.pi1;
        bad.push_back(std::move(row));
      }
      j["disagreements"] = std::move(bad);
      detail::emit(out, j);
      if (!suite.all_agree()) {
        err << "condition and marginal RR disagree on " << suite.disagreements.size()
            << " configurations\n";
        return static_cast<int>(kRecovery);
      }
      return static_cast<int>(kOk);
    }

    const double eta1 = detail::number_field(section, "eta1", std::nullopt, "recovery");
    const double beta = detail::number_field(section, "beta", std::nullopt, "recovery");
    const double gamma = detail::number_field(section, "gamma", std::nullopt, "recovery");
    const double pi0 = detail::number_field(section, "pi0", std::nullopt, "recovery");
    const double pi1 = detail::number_field(section, "pi1", std::nullopt, "recovery");
    const auto r = recovery_condition(eta1, beta, gamma, pi0, pi1, tol);
    Json j;
    j["eta1"] = eta1;
    j["beta"] = beta;
    j["gamma"] = gamma;
    j["pi0"] = pi0;
    j["pi1"] = pi1;
    const Json report = recovery_json(r);
    for (const auto& [k, v] : report.items()) j[k] = v;
    detail::emit(out, j);
    return static_cast<int>(kOk);
  });
}

inline int cmd_orderings(const Invocation& inv, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, kOrderings, [&] {
    const auto spec = detail::model_of(inv);
    OrderingOptions options;
    const auto& section = inv.config.orderings;
    if (section.contains("anchors")) {
      options.anchors = section["anchors"].get<std::vector<std::vector<double>>>();
    }
    if (section.contains("max_points")) options.max_points = section["max_points"].get<std::size_t>();
    options.grid_size = inv.grid_size.value_or(section.value("grid_size", options.grid_size));
    options.tolerance = inv.tolerance.value_or(section.value("tolerance", options.tolerance));

    const auto report = enumerate_orderings(spec, options);
    Json j;
    j["model"] = pretty_print(spec);
    j["grid_size"] = options.grid_size;
    j["grid_points"] = report.grid_points;
    j["points_with_invalid"] = report.points_with_invalid;
    j["tolerance"] = report.tolerance;
    j["caveat"] = report.caveat;
    Json perms = Json::array();
    for (const auto& p : report.permutations) {
      Json trail = Json::object();
      for (const auto& [to, from] : p.alias_trail) trail[to] = from;
      perms.push_back({{"order", p.order},
                       {"model", p.model},
                       {"alias_trail", std::move(trail)},
                       {"invalid_points", p.invalid_points}});
    }
    j["permutations"] = std::move(perms);
    j["classes"] = report.classes;
    Json witnesses = Json::array();
    for (const auto& w : report.witnesses) {
      witnesses.push_back({{"class_a", w.class_a},
                           {"class_b", w.class_b},
                           {"order_a", report.permutations[w.permutation_a].order},
                           {"order_b", report.permutations[w.permutation_b].order},
                           {"params", detail::env_json(w.params)},
                           {"covariates", detail::env_json(w.covariates)},
                           {"etas", w.etas},
                           {"probability_a", w.probability_a},
                           {"probability_b", w.probability_b},
                           {"gap", w.gap}});
    }
    j["witnesses"] = std::move(witnesses);
    j["max_gap"] = report.max_gap;
    detail::emit(out, j);
    return static_cast<int>(kOk);
  });
}

inline constexpr const char* kCommands[] = {"eval",  "sweep",          "effect",
                                            "marginalize", "check-recovery", "orderings"};

inline int run(const std::string& command, const Invocation& inv, std::ostream& out,
               std::ostream& err) {
  if (command == "eval") return cmd_eval(inv, out, err);
  if (command == "sweep") return cmd_sweep(inv, out, err);
  if (command == "effect") return cmd_effect(inv, out, err);
  if (command == "marginalize") return cmd_marginalize(inv, out, err);
  if (command == "check-recovery") return cmd_check_recovery(inv, out, err);
  if (command == "orderings") return cmd_orderings(inv, out, err);
  err << "unknown command '" << command << "'\n";
  return kUsage;
}

}  // namespace flowcalc::cli
