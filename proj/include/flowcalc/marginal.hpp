#pragma once

// Marginalization over a covariate with finite support, and the recovery
// condition under which marginalizing model 1 over trt2 keeps e^beta as the
// relative risk of trt1.

#include <cmath>
#include <functional>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "flowcalc/dsl.hpp"
#include "flowcalc/engine.hpp"
#include "flowcalc/models.hpp"

namespace flowcalc {

class MarginalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kDistributionSumTolerance = 1e-12;

// One row of a distribution table: Pr(covariate = value | context) = probability.
// A row applies to every conditioning environment that agrees with all of
// its context bindings; the most specific applicable row wins.
struct DistributionEntry {
  CovariateEnv context;
  double value = 0.0;
  double probability = 0.0;
};

class CovariateDistribution {
 public:
  using ProbabilityFn = std::function<double(double value, const CovariateEnv& context)>;

  CovariateDistribution(std::string covariate, std::vector<double> support, ProbabilityFn fn)
      : covariate_(std::move(covariate)), support_(std::move(support)), fn_(std::move(fn)) {
    if (support_.empty()) throw MarginalError("distribution of '" + covariate_ + "' has empty support");
  }

  static CovariateDistribution point_mass(std::string covariate, double value) {
    return {std::move(covariate), {value},
            [](double, const CovariateEnv&) { return 1.0; }};
  }

  /// Binary {0, 1} covariate with Pr(covariate = 1 | context) given by `pr_one`.
  static CovariateDistribution binary(std::string covariate,
                                      std::function<double(const CovariateEnv&)> pr_one) {
    return {std::move(covariate), {0.0, 1.0},
            [pr_one = std::move(pr_one)](double v, const CovariateEnv& ctx) {
              const double p = pr_one(ctx);
              return v == 1.0 ? p : 1.0 - p;
            }};
  }

  static CovariateDistribution from_table(std::string covariate,
                                          std::vector<DistributionEntry> entries) {
    std::vector<double> support;
    for (const auto& e : entries) {
      bool seen = false;
      for (double v : support) seen = seen || v == e.value;
      if (!seen) support.push_back(e.value);
    }
    auto fn = [entries = std::move(entries), name = covariate](double v, const CovariateEnv& ctx) {
      const DistributionEntry* best = nullptr;
      bool ambiguous = false;
      for (const auto& e : entries) {
        if (e.value != v || !applies(e.context, ctx)) continue;
        if (best == nullptr || e.context.size() > best->context.size()) {
          best = &e;
          ambiguous = false;
        } else if (e.context.size() == best->context.size()) {
          ambiguous = ambiguous || e.probability != best->probability;
        }
      }
      if (ambiguous) {
        throw MarginalError("distribution of '" + name + "': conflicting table rows for value " +
                            std::to_string(v));
      }
      return best == nullptr ? 0.0 : best->probability;
    };
    return {std::move(covariate), std::move(support), std::move(fn)};
  }

  const std::string& covariate() const { return covariate_; }
  const std::vector<double>& support() const { return support_; }

  double probability(double value, const CovariateEnv& context) const { return fn_(value, context); }

  /// Probabilities over the support in the given context. Throws when any is
  /// negative or they do not sum to one.
  std::vector<double> weights(const CovariateEnv& context) const {
    std::vector<double> w;
    double total = 0.0;
    for (double v : support_) {
      const double p = fn_(v, context);
      if (!(p >= 0.0)) {
        throw MarginalError("distribution of '" + covariate_ + "': negative probability " +
                            std::to_string(p));
      }
      w.push_back(p);
      total += p;
    }
    if (std::abs(total - 1.0) > kDistributionSumTolerance) {
      throw MarginalError("distribution of '" + covariate_ + "': probabilities sum to " +
                          std::to_string(total) + " in this context");
    }
    return w;
  }

 private:
  static bool applies(const CovariateEnv& row, const CovariateEnv& ctx) {
    for (const auto& [name, value] : row) {
      const auto it = ctx.find(name);
      if (it == ctx.end() || it->second != value) return false;
    }
    return true;
  }

  std::string covariate_;
  std::vector<double> support_;
  ProbabilityFn fn_;
};

/// Pr(Y=1 | context) = sum over the support of
/// Pr(Y=1 | context, covariate = v) * Pr(covariate = v | context).
/// Marginalizing over a covariate the spec does not reference is a no-op.
inline double marginalize(const ModelSpec& spec, const ParamEnv& params,
                          const CovariateDistribution& over, const CovariateEnv& context) {
  if (context.contains(over.covariate())) {
    throw MarginalError("covariate '" + over.covariate() + "' is both marginalized and bound");
  }
  const BoundModel model(spec, params);
  if (!references_covariate(spec, over.covariate())) {
    const auto r = model.evaluate(context);
    if (!r.valid) {
      throw MarginalError("invalid evaluation (stage " + std::to_string(r.first_invalid_stage()) + ")");
    }
    return r.probability;
  }
  const auto w = over.weights(context);
  CovariateEnv covs = context;
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double v = over.support()[i];
    covs[over.covariate()] = v;
    const auto r = model.evaluate(covs);
    if (!r.valid) {
      throw MarginalError("invalid evaluation at " + over.covariate() + " = " + std::to_string(v) +
                          " (stage " + std::to_string(r.first_invalid_stage()) + ")");
    }
    total += w[i] * r.probability;
  }
  return total;
}

/// E[exp(gamma * trt2)] for binary trt2 with Pr(trt2 = 1) = pi.
inline double expected_eta3(double gamma, double pi) {
  return 1.0 + std::expm1(gamma) * pi;
}

struct RecoveryTolerances {
  double condition = 1e-12;
  double rr = 1e-9;
};

struct RecoveryReport {
  double lhs_rr = 0.0;           // marginal RR of trt1 by enumeration
  double target = 0.0;           // e^beta
  double condition_value = 0.0;  // (e^gamma - 1)[e^beta pi0 - {1 - eta1 (e^beta - 1)} pi1]
  bool condition_holds = false;
  bool rr_matches = false;
  double marginal_untreated = 0.0;  // Pr(Y=1 | age, trt1=0)
  double marginal_treated = 0.0;    // Pr(Y=1 | age, trt1=1)
};

/// The balance bracket e^beta pi0 - {1 - eta1 (e^beta - 1)} pi1 times (e^gamma - 1).
inline double recovery_condition_value(double eta1, double beta, double gamma, double pi0,
                                       double pi1) {
  const double eb = std::exp(beta);
  return std::expm1(gamma) * (eb * pi0 - (1.0 - eta1 * std::expm1(beta)) * pi1);
}

/// Bindings that realize eta1 on model 1: alpha1 = 0, so age is irrelevant.
inline ParamEnv model1_parameters(double eta1, double beta, double gamma) {
  return {{"f1.intercept", std::log(eta1)}, {"f1.age", 0.0}, {"f2.trt1", beta}, {"f3.trt2", gamma}};
}

/// Computes the closed-form condition and, independently, the marginal RR of
/// trt1 by enumerating trt2 on model 1 with Pr(trt2=1 | trt1=0) = pi0 and
/// Pr(trt2=1 | trt1=1) = pi1.
inline RecoveryReport recovery_condition(double eta1, double beta, double gamma, double pi0,
                                         double pi1, RecoveryTolerances tol = {}) {
  if (!(eta1 > 0.0) || !std::isfinite(eta1)) throw MarginalError("eta1 must be positive and finite");
  if (!(pi0 >= 0.0 && pi0 <= 1.0) || !(pi1 >= 0.0 && pi1 <= 1.0)) {
    throw MarginalError("treatment probabilities must lie in [0,1]");
  }
  const auto& spec = models::model1();
  const ParamEnv params = model1_parameters(eta1, beta, gamma);
  const auto trt2 = CovariateDistribution::binary(
      "trt2", [pi0, pi1](const CovariateEnv& ctx) { return ctx.at("trt1") == 1.0 ? pi1 : pi0; });

  RecoveryReport report;
  report.target = std::exp(beta);
  report.condition_value = recovery_condition_value(eta1, beta, gamma, pi0, pi1);
  report.marginal_untreated = marginalize(spec, params, trt2, {{"age", 0.0}, {"trt1", 0.0}});
  report.marginal_treated = marginalize(spec, params, trt2, {{"age", 0.0}, {"trt1", 1.0}});
  if (report.marginal_untreated == 0.0) throw MarginalError("marginal Pr(Y=1 | trt1=0) is zero");
  report.lhs_rr = report.marginal_treated / report.marginal_untreated;
  report.condition_holds = std::abs(report.condition_value) <= tol.condition;
  report.rr_matches = std::abs(report.lhs_rr - report.target) <= tol.rr * report.target;
  return report;
}

/// pi1 that balances the condition exactly for the given (eta1, beta, pi0),
/// or nothing when it falls outside [0,1] or is undetermined.
inline std::optional<double> balanced_pi1(double eta1, double beta, double pi0) {
  const double coef = 1.0 - eta1 * std::expm1(beta);
  if (coef == 0.0) return std::nullopt;
  const double pi1 = std::exp(beta) * pi0 / coef;
  if (!(pi1 >= 0.0 && pi1 <= 1.0)) return std::nullopt;
  return pi1;
}

struct RecoveryConfiguration {
  double eta1;
  double beta;
  double gamma;
  double pi0;
  double pi1;
};

struct RecoverySuiteResult {
  std::size_t random_checked = 0;
  std::size_t balanced_checked = 0;
  std::size_t agreements = 0;          // condition_holds == rr_matches
  std::size_t balanced_rr_matches = 0;
  std::size_t redrawn_infeasible = 0;  // some marginal evaluation invalid
  std::size_t redrawn_dust = 0;        // |condition| between the two tolerances
  std::size_t balanced_rejected = 0;   // solved pi1 outside [0,1]
  std::vector<std::pair<RecoveryConfiguration, RecoveryReport>> disagreements;

  bool all_agree() const {
    return agreements == random_checked + balanced_checked &&
           balanced_rr_matches == balanced_checked;
  }
};

// Condition values in (tolerance, kDustCeiling) are numerical dust: the closed
// form says "not zero" but the ratio route cannot resolve it.
inline constexpr double kDustCeiling = 1e-6;

/// Draws configurations with eta1 log-uniform in [e^-2, e^2], beta and gamma
/// in [-1, 1], pi0 and pi1 in [0.01, 0.99], and checks that the closed-form
/// condition and the enumerated marginal RR agree. The balanced draws solve
/// for pi1 so the condition holds exactly.
inline RecoverySuiteResult recovery_equivalence_suite(std::size_t random_count,
                                                      std::size_t balanced_count,
                                                      std::uint64_t seed,
                                                      RecoveryTolerances tol = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> log_eta(-2.0, 2.0);
  std::uniform_real_distribution<double> coef(-1.0, 1.0);
  std::uniform_real_distribution<double> prob(0.01, 0.99);

  RecoverySuiteResult result;
  auto record = [&](const RecoveryConfiguration& c, const RecoveryReport& r, bool balanced) {
    if (r.condition_holds == r.rr_matches) {
      ++result.agreements;
    } else {
      result.disagreements.emplace_back(c, r);
    }
    if (balanced && r.rr_matches) ++result.balanced_rr_matches;
  };

  while (result.random_checked < random_count) {
    RecoveryConfiguration c{std::exp(log_eta(rng)), coef(rng), coef(rng), prob(rng), prob(rng)};
    const double cond = std::abs(recovery_condition_value(c.eta1, c.beta, c.gamma, c.pi0, c.pi1));
    if (cond > tol.condition && cond < kDustCeiling) {
      ++result.redrawn_dust;
      continue;
    }
    try {
      const auto r = recovery_condition(c.eta1, c.beta, c.gamma, c.pi0, c.pi1, tol);
      ++result.random_checked;
      record(c, r, false);
    } catch (const MarginalError&) {
      ++result.redrawn_infeasible;
    }
  }

  while (result.balanced_checked < balanced_count) {
    RecoveryConfiguration c{std::exp(log_eta(rng)), coef(rng), coef(rng), prob(rng), 0.0};
    const auto pi1 = balanced_pi1(c.eta1, c.beta, c.pi0);
    if (!pi1) {
      ++result.balanced_rejected;
      continue;
    }
    c.pi1 = *pi1;
    try {
      const auto r = recovery_condition(c.eta1, c.beta, c.gamma, c.pi0, c.pi1, tol);
      ++result.balanced_checked;
      record(c, r, true);
    } catch (const MarginalError&) {
      ++result.redrawn_infeasible;
    }
  }
  return result;
}

}  // namespace flowcalc
