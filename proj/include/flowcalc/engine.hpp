#pragma once

// Sequential flow semantics. Each flow multiplies one quantity by
// eta = exp(linear predictor):
//   ScOdds   scales the odds p / (1 - p)
//   ScRisk1  scales Pr(Y = 1) = p
//   ScRisk0  scales Pr(Y = 0) = 1 - p
// Risk and survival scaling can leave [0,1]. Such stages are flagged, never
// clamped, and evaluation carries the raw value forward.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowcalc/dsl.hpp"

namespace flowcalc {

using ParamEnv = std::map<std::string, double, std::less<>>;
using CovariateEnv = std::map<std::string, double, std::less<>>;

class BindingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StageUpdate {
  double probability;
  bool valid;
};

struct StageRecord {
  int position;
  FlowKind kind;
  double eta;
  double probability;
  bool valid;
};

struct EvalResult {
  double probability = 0.0;
  bool valid = true;
  std::vector<StageRecord> stages;

  // 1-based position of the first invalid stage, 0 when valid.
  int first_invalid_stage() const {
    for (const auto& s : stages) {
      if (!s.valid) return s.position;
    }
    return 0;
  }
};

inline bool in_unit_interval(double p) { return p >= 0.0 && p <= 1.0; }

/// Applies one flow to the current probability. An eta of exactly one
/// returns p untouched for every kind.
inline StageUpdate apply_flow(double p, FlowKind kind, double eta) {
  if (eta == 1.0) return {p, in_unit_interval(p)};
  double next = p;
  switch (kind) {
    case FlowKind::ScOdds: {
      const double scaled = p * eta;
      next = scaled / (scaled + (1.0 - p));
      break;
    }
    case FlowKind::ScRisk1:
      next = p * eta;
      break;
    case FlowKind::ScRisk0:
      next = 1.0 - (1.0 - p) * eta;
      break;
  }
  return {next, in_unit_interval(next)};
}

inline StageUpdate apply_flow(double p, const Flow& flow, double eta) {
  return apply_flow(p, flow.kind, eta);
}

namespace detail {

inline double lookup(const std::map<std::string, double, std::less<>>& env,
                     std::string_view name, std::string_view what) {
  const auto it = env.find(name);
  if (it == env.end()) {
    throw BindingError("unbound " + std::string(what) + " '" + std::string(name) + "'");
  }
  return it->second;
}

inline double checked_exp(double linear, int position) {
  const double value = std::exp(linear);
  if (!std::isfinite(linear) || !std::isfinite(value) || value <= 0.0) {
    throw EvaluationError("flow " + std::to_string(position) +
                          ": eta is not a positive finite number (linear predictor " +
                          std::to_string(linear) + ")");
  }
  return value;
}

}  // namespace detail

/// eta = exp(intercept + sum of coefficient * covariate) for one flow.
inline double eta(const Flow& flow, const ParamEnv& params, const CovariateEnv& covs) {
  double linear = 0.0;
  if (flow.predictor.has_intercept) {
    linear += detail::lookup(params, intercept_parameter(flow.position), "parameter");
  }
  for (const auto& term : flow.predictor.terms) {
    const double coef =
        detail::lookup(params, coefficient_parameter(flow.position, term), "parameter");
    linear += coef * detail::lookup(covs, term, "covariate");
  }
  return detail::checked_exp(linear, flow.position);
}

/// Every parameter of the spec must be bound and nothing else may be.
inline void check_parameters(const ModelSpec& spec, const ParamEnv& params) {
  const auto names = parameter_names(spec);
  for (const auto& name : names) {
    if (!params.contains(name)) throw BindingError("unbound parameter '" + name + "'");
  }
  for (const auto& [name, value] : params) {
    bool known = false;
    for (const auto& n : names) known = known || n == name;
    if (!known) throw BindingError("parameter '" + name + "' is not part of the model");
  }
}

inline void check_covariates(const ModelSpec& spec, const CovariateEnv& covs) {
  for (const auto& name : covariate_names(spec)) {
    if (!covs.contains(name)) throw BindingError("unbound covariate '" + name + "'");
  }
}

/// A spec with its parameters resolved to positional coefficients. Covariate
/// values are then supplied in covariate_names(spec) order, which makes
/// repeated evaluation cheap.
class BoundModel {
 public:
  struct Outcome {
    double probability;
    bool valid;
  };

  BoundModel(const ModelSpec& spec, const ParamEnv& params)
      : base_(spec.base_prob()), covariates_(covariate_names(spec)) {
    check_parameters(spec, params);
    for (const auto& flow : spec.flows) {
      Stage stage{flow.kind, flow.position, 0.0, {}};
      if (flow.predictor.has_intercept) {
        stage.intercept = params.find(intercept_parameter(flow.position))->second;
      }
      for (const auto& term : flow.predictor.terms) {
        std::size_t index = 0;
        while (covariates_[index] != term) ++index;
        stage.terms.push_back(
            {index, params.find(coefficient_parameter(flow.position, term))->second});
      }
      stages_.push_back(std::move(stage));
    }
  }

  const std::vector<std::string>& covariates() const { return covariates_; }

  Outcome probability(std::span<const double> covariate_values) const {
    double p = base_;
    bool valid = in_unit_interval(p);
    for (const auto& stage : stages_) {
      const auto update = apply_flow(p, stage.kind, stage_eta(stage, covariate_values));
      p = update.probability;
      valid = valid && update.valid;
      if (!std::isfinite(p)) throw non_finite(stage.position);
    }
    return {p, valid};
  }

  EvalResult evaluate(const CovariateEnv& covs) const {
    const auto values = covariate_values(covs);
    EvalResult result;
    double p = base_;
    result.valid = in_unit_interval(p);
    for (const auto& stage : stages_) {
      const double e = stage_eta(stage, values);
      const auto update = apply_flow(p, stage.kind, e);
      p = update.probability;
      if (!std::isfinite(p)) throw non_finite(stage.position);
      result.stages.push_back({stage.position, stage.kind, e, p, update.valid});
      result.valid = result.valid && update.valid;
    }
    result.probability = p;
    return result;
  }

  std::vector<double> covariate_values(const CovariateEnv& covs) const {
    std::vector<double> values;
    values.reserve(covariates_.size());
    for (const auto& name : covariates_) values.push_back(detail::lookup(covs, name, "covariate"));
    return values;
  }

 private:
  struct Term {
    std::size_t covariate;
    double coefficient;
  };
  struct Stage {
    FlowKind kind;
    int position;
    double intercept;
    std::vector<Term> terms;
  };

  static double stage_eta(const Stage& stage, std::span<const double> values) {
    double linear = stage.intercept;
    for (const auto& t : stage.terms) linear += t.coefficient * values[t.covariate];
    return detail::checked_exp(linear, stage.position);
  }

  static EvaluationError non_finite(int position) {
    return EvaluationError("flow " + std::to_string(position) +
                           ": probability is not finite");
  }

  double base_;
  std::vector<std::string> covariates_;
  std::vector<Stage> stages_;
};

/// Folds the flows over the base probability in order, recording each stage.
/// Extra covariates are ignored; extra parameters are a BindingError.
inline EvalResult evaluate(const ModelSpec& spec, const ParamEnv& params,
                           const CovariateEnv& covs) {
  return BoundModel(spec, params).evaluate(covs);
}

// Reference closed forms for Ber(1/2) | ScOdds | ScRisk1 | ScRisk0 (model 1)
// and Ber(1/2) | ScOdds | ScRisk0 | ScRisk1 (model 2). eta1 belongs to the
// ScOdds flow, eta2 to ScRisk1, eta3 to ScRisk0.
inline double closed_form_model1(double eta1, double eta2, double eta3) {
  return 1.0 - (1.0 + eta1 - eta1 * eta2) / (1.0 + eta1) * eta3;
}

inline double closed_form_model2(double eta1, double eta2, double eta3) {
  return (1.0 + eta1 - eta3) / (1.0 + eta1) * eta2;
}

/// |a - b| <= max(rel * |b|, abs_floor)
inline bool close_relative(double a, double b, double rel = 1e-12, double abs_floor = 1e-14) {
  return std::abs(a - b) <= std::max(rel * std::abs(b), abs_floor);
}

}  // namespace flowcalc
