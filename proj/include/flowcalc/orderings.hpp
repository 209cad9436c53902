#pragma once

// Enumerates the permutations of a spec's flows and partitions them into
// classes of orderings that imply the same conditional probability on a
// deterministic grid.
//
// A permutation moves whole flows, predictor and coefficients included, so at
// any binding the composed probability depends only on the flow kinds, their
// order and the per-flow eta values. The grid is therefore laid over log-eta
// in [-2, 2] for every flow whose eta is not identically one, and each grid
// point is realized as a concrete binding (all covariates at 1, the flow's
// log-eta on its intercept, or on its first coefficient when there is no
// intercept) so that witnesses replay through the ordinary evaluator.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "flowcalc/dsl.hpp"
#include "flowcalc/engine.hpp"

namespace flowcalc {

class OrderingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kMaxOrderedFlows = 8;
inline constexpr double kLogEtaRange = 2.0;

struct OrderingOptions {
  int grid_size = 8;
  double tolerance = 1e-10;
  // Points inspected before the grid, as eta vectors in original flow order.
  // The first anchor that separates two classes becomes their witness.
  std::vector<std::vector<double>> anchors;
  // Tensor grids larger than this are replaced by this many Halton points.
  std::size_t max_points = 1024;
};

struct PermutationInfo {
  std::vector<int> order;  // original 1-based flow positions, in new order
  std::string model;
  // (parameter in the permuted spec, parameter it came from)
  std::vector<std::pair<std::string, std::string>> alias_trail;
  std::size_t invalid_points = 0;
};

struct OrderingWitness {
  std::size_t class_a = 0;
  std::size_t class_b = 0;
  std::size_t permutation_a = 0;
  std::size_t permutation_b = 0;
  ParamEnv params;  // named for the original spec
  CovariateEnv covariates;
  std::vector<double> etas;  // original flow order
  double probability_a = 0.0;
  double probability_b = 0.0;
  double gap = 0.0;
};

struct OrderingReport {
  std::vector<PermutationInfo> permutations;
  std::vector<std::vector<std::size_t>> classes;  // permutation indices; first is representative
  std::vector<OrderingWitness> witnesses;
  double max_gap = 0.0;  // largest gap between class representatives
  std::size_t grid_points = 0;
  std::size_t points_with_invalid = 0;
  double tolerance = 0.0;
  std::string caveat =
      "orderings in the same class are not distinguished on this grid; "
      "this is not a proof that they are identical";

  std::size_t class_of(std::size_t permutation) const {
    for (std::size_t c = 0; c < classes.size(); ++c) {
      if (std::find(classes[c].begin(), classes[c].end(), permutation) != classes[c].end()) return c;
    }
    throw std::out_of_range("permutation index not classified");
  }

  /// Index of the permutation with this order, in original 1-based positions.
  std::size_t find(std::span<const int> order) const {
    for (std::size_t i = 0; i < permutations.size(); ++i) {
      if (std::equal(order.begin(), order.end(), permutations[i].order.begin(),
                     permutations[i].order.end())) {
        return i;
      }
    }
    throw std::out_of_range("no such permutation");
  }
};

namespace detail {

inline void check_order(const ModelSpec& spec, std::span<const int> order) {
  std::vector<int> sorted(order.begin(), order.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<int> expected(spec.flows.size());
  std::iota(expected.begin(), expected.end(), 1);
  if (sorted != expected) throw OrderingError("not a permutation of the spec's flow positions");
}

}  // namespace detail

/// Spec with flows rearranged; order[i] is the original position of the flow
/// placed at position i + 1.
inline ModelSpec permute(const ModelSpec& spec, std::span<const int> order) {
  detail::check_order(spec, order);
  ModelSpec out = spec;
  for (std::size_t i = 0; i < order.size(); ++i) {
    out.flows[i] = spec.flows[static_cast<std::size_t>(order[i] - 1)];
    out.flows[i].position = static_cast<int>(i) + 1;
  }
  return out;
}

/// Pairs of (new name, original name) for the parameters of permute(spec, order).
inline std::vector<std::pair<std::string, std::string>> permutation_alias_trail(
    const ModelSpec& spec, std::span<const int> order) {
  detail::check_order(spec, order);
  std::vector<std::pair<std::string, std::string>> trail;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& flow = spec.flows[static_cast<std::size_t>(order[i] - 1)];
    const int to = static_cast<int>(i) + 1;
    if (flow.predictor.has_intercept) {
      trail.emplace_back(intercept_parameter(to), intercept_parameter(flow.position));
    }
    for (const auto& term : flow.predictor.terms) {
      trail.emplace_back(coefficient_parameter(to, term), coefficient_parameter(flow.position, term));
    }
  }
  return trail;
}

/// Renames a binding of the original spec's parameters for permute(spec, order).
inline ParamEnv permute_params(const ModelSpec& spec, const ParamEnv& params,
                               std::span<const int> order) {
  ParamEnv out;
  for (const auto& [to, from] : permutation_alias_trail(spec, order)) {
    const auto it = params.find(from);
    if (it == params.end()) throw BindingError("unbound parameter '" + from + "'");
    out[to] = it->second;
  }
  return out;
}

/// Flows whose eta is identically one: no intercept and no terms.
inline bool has_constant_eta(const Flow& flow) {
  return !flow.predictor.has_intercept && flow.predictor.terms.empty();
}

/// Binding of the original spec realizing the given per-flow log-eta values.
inline std::pair<ParamEnv, CovariateEnv> realize_log_etas(const ModelSpec& spec,
                                                          std::span<const double> log_etas) {
  ParamEnv params;
  CovariateEnv covs;
  for (const auto& name : covariate_names(spec)) covs[name] = 1.0;
  for (std::size_t i = 0; i < spec.flows.size(); ++i) {
    const auto& flow = spec.flows[i];
    bool placed = false;
    if (flow.predictor.has_intercept) {
      params[intercept_parameter(flow.position)] = log_etas[i];
      placed = true;
    }
    for (const auto& term : flow.predictor.terms) {
      params[coefficient_parameter(flow.position, term)] = placed ? 0.0 : log_etas[i];
      placed = true;
    }
  }
  return {std::move(params), std::move(covs)};
}

namespace detail {

inline double radical_inverse(std::size_t index, unsigned base) {
  double result = 0.0;
  double f = 1.0 / base;
  while (index > 0) {
    result += f * static_cast<double>(index % base);
    index /= base;
    f /= base;
  }
  return result;
}

// Log-eta points over the free flows; constant flows stay at zero.
inline std::vector<std::vector<double>> log_eta_grid(const ModelSpec& spec,
                                                     const OrderingOptions& options) {
  std::vector<std::size_t> free;
  for (std::size_t i = 0; i < spec.flows.size(); ++i) {
    if (!has_constant_eta(spec.flows[i])) free.push_back(i);
  }
  const std::size_t n = spec.flows.size();
  const auto g = static_cast<std::size_t>(options.grid_size);
  std::vector<std::vector<double>> points;
  if (free.empty()) {
    points.emplace_back(n, 0.0);
    return points;
  }

  std::size_t tensor = 1;
  bool fits = true;
  for (std::size_t d = 0; d < free.size() && fits; ++d) {
    tensor *= g;
    fits = tensor <= options.max_points;
  }

  if (fits) {
    std::vector<std::size_t> digits(free.size(), 0);
    for (std::size_t k = 0; k < tensor; ++k) {
      std::vector<double> point(n, 0.0);
      for (std::size_t d = 0; d < free.size(); ++d) {
        point[free[d]] = -kLogEtaRange +
                         2.0 * kLogEtaRange * static_cast<double>(digits[d]) / static_cast<double>(g - 1);
      }
      points.push_back(std::move(point));
      for (std::size_t d = free.size(); d-- > 0;) {
        if (++digits[d] < g) break;
        digits[d] = 0;
      }
    }
  } else {
    static constexpr unsigned kPrimes[] = {2, 3, 5, 7, 11, 13, 17, 19};
    for (std::size_t k = 1; k <= options.max_points; ++k) {
      std::vector<double> point(n, 0.0);
      for (std::size_t d = 0; d < free.size(); ++d) {
        point[free[d]] = -kLogEtaRange + 2.0 * kLogEtaRange * radical_inverse(k, kPrimes[d]);
      }
      points.push_back(std::move(point));
    }
  }
  return points;
}

inline double fold(const ModelSpec& spec, std::span<const int> order,
                   std::span<const double> etas, bool& valid) {
  double p = spec.base_prob();
  valid = in_unit_interval(p);
  for (const int pos : order) {
    const auto i = static_cast<std::size_t>(pos - 1);
    const auto update = apply_flow(p, spec.flows[i].kind, etas[i]);
    p = update.probability;
    valid = valid && update.valid;
  }
  return p;
}

}  // namespace detail

/// Evaluates every ordering of the spec's flows on the anchors and the grid
/// and groups orderings that agree to `tolerance` at every point where both
/// are valid. Each ordering joins the class of the first representative it
/// agrees with; the lowest-index member represents its class.
inline OrderingReport enumerate_orderings(const ModelSpec& spec, const OrderingOptions& options) {
  const std::size_t n = spec.flows.size();
  if (n > kMaxOrderedFlows) {
    throw OrderingError("too many flows to enumerate orderings (" + std::to_string(n) +
                        " > " + std::to_string(kMaxOrderedFlows) + ")");
  }
  if (options.grid_size < 2) throw OrderingError("grid size must be at least 2");
  if (!(options.tolerance >= 0.0)) throw OrderingError("tolerance must be non-negative");

  std::vector<std::vector<double>> log_points;
  for (const auto& anchor : options.anchors) {
    if (anchor.size() != n) throw OrderingError("anchor must give one eta per flow");
    std::vector<double> point;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(anchor[i] > 0.0) || !std::isfinite(anchor[i])) {
        throw OrderingError("anchor etas must be positive and finite");
      }
      if (has_constant_eta(spec.flows[i]) && anchor[i] != 1.0) {
        throw OrderingError("flow " + std::to_string(i + 1) + " has eta fixed at 1");
      }
      point.push_back(std::log(anchor[i]));
    }
    log_points.push_back(std::move(point));
  }
  for (auto& p : detail::log_eta_grid(spec, options)) log_points.push_back(std::move(p));

  // Etas exactly as the evaluator will compute them from the realized binding.
  std::vector<std::vector<double>> etas;
  for (const auto& lp : log_points) {
    std::vector<double> e(n);
    for (std::size_t i = 0; i < n; ++i) e[i] = std::exp(lp[i]);
    etas.push_back(std::move(e));
  }
  const std::size_t points = etas.size();

  OrderingReport report;
  report.grid_points = points;
  report.tolerance = options.tolerance;

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 1);
  std::vector<bool> any_invalid(points, false);
  // Probabilities of each class representative; NaN marks an invalid point.
  std::vector<std::vector<double>> rep_values;
  std::vector<double> values(points);
  do {
    PermutationInfo info;
    info.order = order;
    const auto permuted = permute(spec, order);
    info.model = pretty_print(permuted);
    info.alias_trail = permutation_alias_trail(spec, order);
    for (std::size_t k = 0; k < points; ++k) {
      bool valid = true;
      const double p = detail::fold(spec, order, etas[k], valid);
      values[k] = valid ? p : std::nan("");
      if (!valid) {
        ++info.invalid_points;
        any_invalid[k] = true;
      }
    }
    const std::size_t index = report.permutations.size();
    report.permutations.push_back(std::move(info));

    std::size_t joined = report.classes.size();
    for (std::size_t c = 0; c < rep_values.size() && joined == report.classes.size(); ++c) {
      bool agree = true;
      for (std::size_t k = 0; k < points && agree; ++k) {
        if (std::isnan(values[k]) || std::isnan(rep_values[c][k])) continue;
        agree = std::abs(values[k] - rep_values[c][k]) <= options.tolerance;
      }
      if (agree) joined = c;
    }
    if (joined == report.classes.size()) {
      report.classes.push_back({index});
      rep_values.push_back(values);
    } else {
      report.classes[joined].push_back(index);
    }
  } while (std::next_permutation(order.begin(), order.end()));

  report.points_with_invalid =
      static_cast<std::size_t>(std::count(any_invalid.begin(), any_invalid.end(), true));

  const std::size_t anchor_count = options.anchors.size();
  for (std::size_t a = 0; a < report.classes.size(); ++a) {
    for (std::size_t b = a + 1; b < report.classes.size(); ++b) {
      std::size_t chosen = points;
      double best = -1.0;
      for (std::size_t k = 0; k < points; ++k) {
        const double va = rep_values[a][k];
        const double vb = rep_values[b][k];
        if (std::isnan(va) || std::isnan(vb)) continue;
        const double gap = std::abs(va - vb);
        report.max_gap = std::max(report.max_gap, gap);
        if (k < anchor_count) {
          if (chosen == points && gap > options.tolerance) {
            chosen = k;
            best = std::numeric_limits<double>::infinity();
          }
        } else if (gap > best) {
          chosen = k;
          best = gap;
        }
      }
      OrderingWitness w;
      w.class_a = a;
      w.class_b = b;
      w.permutation_a = report.classes[a].front();
      w.permutation_b = report.classes[b].front();
      auto [params, covs] = realize_log_etas(spec, log_points[chosen]);
      w.params = std::move(params);
      w.covariates = std::move(covs);
      w.etas = etas[chosen];
      w.probability_a = rep_values[a][chosen];
      w.probability_b = rep_values[b][chosen];
      w.gap = std::abs(w.probability_a - w.probability_b);
      report.witnesses.push_back(std::move(w));
    }
  }
  return report;
}

inline OrderingReport enumerate_orderings(const ModelSpec& spec, int grid_size, double tolerance) {
  OrderingOptions options;
  options.grid_size = grid_size;
  options.tolerance = tolerance;
  return enumerate_orderings(spec, options);
}

/// Re-evaluates both sides of a witness through the full evaluator and
/// returns (probability_a, probability_b).
inline std::pair<double, double> replay_witness(const ModelSpec& spec, const OrderingReport& report,
                                                const OrderingWitness& w) {
  const auto& oa = report.permutations[w.permutation_a].order;
  const auto& ob = report.permutations[w.permutation_b].order;
  const auto ra = evaluate(permute(spec, oa), permute_params(spec, w.params, oa), w.covariates);
  const auto rb = evaluate(permute(spec, ob), permute_params(spec, w.params, ob), w.covariates);
  return {ra.probability, rb.probability};
}

}  // namespace flowcalc
