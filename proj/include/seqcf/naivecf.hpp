#pragma once

// Baseline counterfactual search: flip any bits, ignoring the taxonomy, until
// the risk drops below the threshold.

#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "seqcf/cohort.hpp"
#include "seqcf/counterfactual.hpp"
#include "seqcf/error.hpp"
#include "seqcf/riskmodel.hpp"

namespace seqcf {

enum class NaiveSearch { Auto, Greedy, Exhaustive };
enum class Distance { L0, L1 };  // identical on binary vectors

struct NaiveCfConfig {
  double risk_threshold = 0.5;
  Distance distance = Distance::L0;
  std::size_t max_changes = 5;
  NaiveSearch search = NaiveSearch::Auto;  // exhaustive when 3d <= 20
};

inline void validate(const NaiveCfConfig& c) {
  if (!(c.risk_threshold > 0 && c.risk_threshold < 1)) {
    throw ValidationError("risk threshold must lie in (0, 1)", "theta");
  }
  if (c.max_changes < 1) throw ValidationError("max_changes must be at least 1", "max_changes");
}

inline NaiveSearch resolve(NaiveSearch s, std::size_t d) {
  if (s != NaiveSearch::Auto) return s;
  return 3 * d <= 20 ? NaiveSearch::Exhaustive : NaiveSearch::Greedy;
}

namespace detail {

// Each step flips the single bit with the lowest resulting score (lowest
// flat index on ties); stops when below threshold or when no flip helps.
inline std::optional<TemporalFeatureVector> naive_greedy(const RiskScorer& model,
                                                         TemporalFeatureVector x,
                                                         const NaiveCfConfig& c,
                                                         std::vector<double>* trace) {
  double y = model.score(x);
  if (trace) trace->push_back(y);
  std::vector<std::uint8_t> flipped(x.flat_size(), 0);
  for (std::size_t step = 0; step < c.max_changes && y >= c.risk_threshold; ++step) {
    std::optional<std::size_t> best;
    double best_y = y;
    for (std::size_t k = 0; k < x.flat_size(); ++k) {
      if (flipped[k]) continue;
      x.set_flat(k, !x.flat(k));
      double s = model.score(x);
      x.set_flat(k, !x.flat(k));
      if (s < best_y) {
        best_y = s;
        best = k;
      }
    }
    if (!best) break;
    x.set_flat(*best, !x.flat(*best));
    flipped[*best] = 1;
    y = best_y;
    if (trace) trace->push_back(y);
  }
  if (y >= c.risk_threshold) return std::nullopt;
  return x;
}

// Smallest flip set first; within a size, index tuples in lexicographic order.
inline std::optional<TemporalFeatureVector> naive_exhaustive(const RiskScorer& model,
                                                             const TemporalFeatureVector& x,
                                                             const NaiveCfConfig& c) {
  const std::size_t m = x.flat_size();
  for (std::size_t k = 1; k <= std::min(c.max_changes, m); ++k) {
    std::vector<std::size_t> idx(k);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    while (true) {
      auto y = x;
      for (auto i : idx) y.set_flat(i, !y.flat(i));
      if (model.score(y) < c.risk_threshold) return y;
      // next combination
      std::size_t pos = k;
      while (pos > 0 && idx[pos - 1] == m - k + (pos - 1)) --pos;
      if (pos == 0) break;
      ++idx[pos - 1];
      for (std::size_t q = pos; q < k; ++q) idx[q] = idx[q - 1] + 1;
    }
  }
  return std::nullopt;
}

}  // namespace detail

// The counterfactual vector alone; nullopt means no flip set within
// max_changes crosses the threshold. A patient already below it is returned
// unchanged.
inline std::optional<TemporalFeatureVector> naive_search(const RiskScorer& model,
                                                         const TemporalFeatureVector& factual,
                                                         const NaiveCfConfig& config,
                                                         std::vector<double>* greedy_trace = nullptr) {
  validate(config);
  if (model.score(factual) < config.risk_threshold) return factual;
  if (resolve(config.search, factual.dim()) == NaiveSearch::Exhaustive) {
    return detail::naive_exhaustive(model, factual, config);
  }
  return detail::naive_greedy(model, factual, config, greedy_trace);
}

inline std::optional<CounterfactualResult> generate_naive(const RiskScorer& model, const Patient& patient,
                                                          const FeatureCatalog& cat,
                                                          const DependencyGraph& graph,
                                                          const NaiveCfConfig& config,
                                                          double epsilon = kDefaultEpsilon) {
  auto cf = naive_search(model, patient.features, config);
  if (!cf) return std::nullopt;
  return assemble_result(patient.patient_id, "naive", patient.features, std::move(*cf), model, cat,
                         graph, epsilon);
}

}  // namespace seqcf
