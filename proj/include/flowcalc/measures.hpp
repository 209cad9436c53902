#pragma once

// Conditional effect measures for a covariate contrast, subcompositions, and
// reference formulas for the effect of trt1 under model 1 and the composite
// trt2 contrast under model 3.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowcalc/dsl.hpp"
#include "flowcalc/engine.hpp"
#include "flowcalc/models.hpp"

namespace flowcalc {

class EffectError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Measure { RR, SR, OR };

inline std::string_view to_string(Measure m) {
  switch (m) {
    case Measure::RR: return "RR";
    case Measure::SR: return "SR";
    case Measure::OR: return "OR";
  }
  return "?";
}

inline std::optional<Measure> measure_from_string(std::string_view name) {
  if (name == "RR") return Measure::RR;
  if (name == "SR") return Measure::SR;
  if (name == "OR") return Measure::OR;
  return std::nullopt;
}

struct EffectQuery {
  std::string target;
  double low = 0.0;
  double high = 1.0;
  CovariateEnv context;
  Measure measure = Measure::RR;
};

struct EffectReport {
  double value = std::numeric_limits<double>::quiet_NaN();
  bool valid = false;
  double p_low = 0.0;
  double p_high = 0.0;
  bool low_valid = false;
  bool high_valid = false;
};

/// Ratio of the measure between two endpoint probabilities. Returns NaN when
/// the denominator vanishes.
inline double measure_ratio(Measure measure, double p_low, double p_high) {
  double num = 0.0;
  double den = 0.0;
  switch (measure) {
    case Measure::RR:
      num = p_high;
      den = p_low;
      break;
    case Measure::SR:
      num = 1.0 - p_high;
      den = 1.0 - p_low;
      break;
    case Measure::OR:
      // odds(high) / odds(low), undefined when either odds is infinite
      if (p_high == 1.0 || p_low == 1.0) return std::numeric_limits<double>::quiet_NaN();
      num = p_high * (1.0 - p_low);
      den = p_low * (1.0 - p_high);
      break;
  }
  if (den == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return num / den;
}

/// Evaluates the model at target = high and target = low with the same
/// context. Invalid endpoints or a zero denominator give a report with
/// valid = false rather than an exception.
inline EffectReport effect(const ModelSpec& spec, const ParamEnv& params,
                           const EffectQuery& query) {
  if (query.context.contains(query.target)) {
    throw EffectError("target '" + query.target + "' must not be bound in the context");
  }
  if (query.low == query.high) {
    throw EffectError("contrast endpoints must differ");
  }
  const BoundModel model(spec, params);
  CovariateEnv covs = query.context;
  covs[query.target] = query.low;
  const auto low = model.evaluate(covs);
  covs[query.target] = query.high;
  const auto high = model.evaluate(covs);

  EffectReport report;
  report.p_low = low.probability;
  report.p_high = high.probability;
  report.low_valid = low.valid;
  report.high_valid = high.valid;
  report.value = measure_ratio(query.measure, low.probability, high.probability);
  report.valid = low.valid && high.valid && !std::isnan(report.value);
  return report;
}

/// The spec truncated to its first `keep` flows.
inline ModelSpec subcomposition(const ModelSpec& spec, std::size_t keep) {
  if (keep > spec.flows.size()) {
    throw std::out_of_range("subcomposition keeps " + std::to_string(keep) + " of " +
                            std::to_string(spec.flows.size()) + " flows");
  }
  ModelSpec sub = spec;
  sub.flows.resize(keep);
  return sub;
}

/// Parameters of `params` that belong to `spec`; used to carry a full-model
/// binding over to one of its subcompositions.
inline ParamEnv restrict_parameters(const ModelSpec& spec, const ParamEnv& params) {
  ParamEnv out;
  for (const auto& name : parameter_names(spec)) {
    if (const auto it = params.find(name); it != params.end()) out.insert(*it);
  }
  return out;
}

/// RR of trt1 under model 1 given eta1(age), eta3(trt2) and beta:
///   (1 + eta1 - eta3 + eta1 * eta3 * (e^beta - 1)) / (1 + eta1 - eta3)
inline double rr_model1_formula(double eta1, double eta3, double beta) {
  const double den = 1.0 + eta1 - eta3;
  if (den == 0.0) throw EffectError("model 1 RR formula: zero denominator (1 + eta1 = eta3)");
  return (den + eta1 * eta3 * std::expm1(beta)) / den;
}

struct CompositeContrastRow {
  double age;
  double p_untreated;  // Pr(Y=1 | age, trt2=0)
  double p_treated;    // Pr(Y=1 | age, trt2=1)
  double affine;       // 1 - e^gamma + e^(beta+gamma) * p_untreated
  double rr;
  double sr;
  bool valid;
};

struct CompositeContrastReport {
  std::vector<CompositeContrastRow> rows;
  std::size_t evaluated = 0;
  std::size_t excluded = 0;
  double max_abs_discrepancy = 0.0;
  double exp_beta = 1.0;
  double exp_gamma = 1.0;
  bool rr_equals_exp_beta = true;   // every valid row within margin
  bool sr_equals_exp_gamma = true;  // every valid row within margin
  bool null_contrast = true;        // p_treated == p_untreated within margin
};

/// Checks, on model 3, that Pr(Y=1 | age, trt2=1) equals
/// 1 - e^gamma + e^(beta+gamma) Pr(Y=1 | age, trt2=0) at every age, and
/// whether the trt2 contrast reduces to a plain RR (e^beta) or SR (e^gamma).
/// `params` binds f1.intercept, f1.age, f2.trt2 (beta) and f3.trt2 (gamma).
inline CompositeContrastReport composite_contrast_check(const ParamEnv& params,
                                                        std::span<const double> age_grid,
                                                        double margin = 1e-6) {
  const auto& spec = models::model3();
  const BoundModel model(spec, params);
  const double beta = params.at("f2.trt2");
  const double gamma = params.at("f3.trt2");

  CompositeContrastReport report;
  report.exp_beta = std::exp(beta);
  report.exp_gamma = std::exp(gamma);
  for (const double age : age_grid) {
    const auto untreated = model.evaluate({{"age", age}, {"trt2", 0.0}});
    const auto treated = model.evaluate({{"age", age}, {"trt2", 1.0}});
    CompositeContrastRow row{};
    row.age = age;
    row.p_untreated = untreated.probability;
    row.p_treated = treated.probability;
    row.affine = 1.0 - report.exp_gamma + std::exp(beta + gamma) * untreated.probability;
    row.rr = measure_ratio(Measure::RR, row.p_untreated, row.p_treated);
    row.sr = measure_ratio(Measure::SR, row.p_untreated, row.p_treated);
    row.valid = untreated.valid && treated.valid;
    if (row.valid) {
      ++report.evaluated;
      report.max_abs_discrepancy =
          std::max(report.max_abs_discrepancy, std::abs(row.p_treated - row.affine));
      report.rr_equals_exp_beta =
          report.rr_equals_exp_beta && std::abs(row.rr - report.exp_beta) <= margin;
      report.sr_equals_exp_gamma =
          report.sr_equals_exp_gamma && std::abs(row.sr - report.exp_gamma) <= margin;
      report.null_contrast =
          report.null_contrast && std::abs(row.p_treated - row.p_untreated) <= margin;
    } else {
      ++report.excluded;
    }
    report.rows.push_back(row);
  }
  if (report.evaluated == 0) {
    report.rr_equals_exp_beta = report.sr_equals_exp_gamma = report.null_contrast = false;
  }
  return report;
}

}  // namespace flowcalc
