#pragma once

// Sequential counterfactuals: apply interventions, then carry their effect
// forward through the dependency graph one period at a time.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "seqcf/catalog.hpp"
#include "seqcf/cohort.hpp"
#include "seqcf/counterfactual.hpp"
#include "seqcf/depgraph.hpp"
#include "seqcf/error.hpp"
#include "seqcf/plausibility.hpp"
#include "seqcf/riskmodel.hpp"
#include "seqcf/rng.hpp"

namespace seqcf {

enum class Action { Add, Remove };

inline std::string_view to_string(Action a) { return a == Action::Add ? "add" : "remove"; }

inline std::optional<Action> parse_action(std::string_view s) {
  if (s == "add") return Action::Add;
  if (s == "remove") return Action::Remove;
  return std::nullopt;
}

struct Intervention {
  FeatureIndex feature = 0;
  Period period = Period::History;
  Action action = Action::Add;

  friend bool operator==(const Intervention&, const Intervention&) = default;
};

// Resolves a code and checks it names an Intervention-class feature.
inline Intervention make_intervention(const FeatureCatalog& cat, std::string_view code, Period period,
                                      Action action = Action::Add) {
  auto found = cat.find(code);
  if (!found) throw ValidationError("unknown feature code: " + std::string(code), std::string(code));
  auto f = *found;
  if (!cat.is(f, TaxonomyClass::Intervention)) {
    throw ValidationError("intervention on non-Intervention feature: " + std::string(code),
                          std::string(code));
  }
  return {f, period, action};
}

// "code@period" or "code@period:remove"
inline Intervention parse_intervention(const FeatureCatalog& cat, std::string_view spec) {
  auto at = spec.find('@');
  if (at == std::string_view::npos) {
    throw ValidationError("intervention must look like code@period[:add|:remove]: " + std::string(spec),
                          "intervention");
  }
  auto code = spec.substr(0, at);
  auto rest = spec.substr(at + 1);
  auto action = Action::Add;
  if (auto colon = rest.find(':'); colon != std::string_view::npos) {
    auto a = parse_action(rest.substr(colon + 1));
    if (!a) throw ValidationError("unknown intervention action in " + std::string(spec), "intervention");
    action = *a;
    rest = rest.substr(0, colon);
  }
  auto period = parse_period(rest);
  if (!period) throw ValidationError("unknown period in " + std::string(spec), "intervention");
  return make_intervention(cat, code, *period, action);
}

enum class PropagationMode { Deterministic, Stochastic };

inline std::string_view to_string(PropagationMode m) {
  return m == PropagationMode::Deterministic ? "deterministic" : "stochastic";
}

inline std::optional<PropagationMode> parse_propagation_mode(std::string_view s) {
  if (s == "deterministic") return PropagationMode::Deterministic;
  if (s == "stochastic") return PropagationMode::Stochastic;
  return std::nullopt;
}

struct PropagationConfig {
  PropagationMode mode = PropagationMode::Deterministic;
  std::size_t n_samples = 200;
  std::uint64_t seed = 0;
  double risk_threshold = 0.5;
  double epsilon = kDefaultEpsilon;
};

namespace detail {

struct Applied {
  TemporalFeatureVector x;
  std::vector<std::uint8_t> pinned;  // flattened (period, feature)
};

inline Applied apply_interventions(const FeatureCatalog& cat, const TemporalFeatureVector& factual,
                                   const std::vector<Intervention>& interventions) {
  Applied a{factual, std::vector<std::uint8_t>(factual.flat_size(), 0)};
  const std::size_t d = cat.size();
  std::vector<std::optional<Action>> seen(factual.flat_size());
  for (const auto& r : interventions) {
    if (r.feature >= d) throw NotFoundError("unknown feature index " + std::to_string(r.feature));
    if (!cat.is(r.feature, TaxonomyClass::Intervention)) {
      throw ValidationError("intervention on non-Intervention feature: " + cat.code(r.feature),
                            cat.code(r.feature));
    }
    auto k = index(r.period) * d + r.feature;
    if (seen[k] && *seen[k] != r.action) {
      throw ValidationError("conflicting interventions on " + cat.code(r.feature) + "@" +
                                std::string(to_string(r.period)),
                            cat.code(r.feature));
    }
    seen[k] = r.action;
    a.x.set(r.feature, r.period, r.action == Action::Add);
    a.pinned[k] = 1;
  }
  return a;
}

// True if an Immutable bit at (i, t) must be present: it is in the record or
// the counterfactual already holds it at an earlier period.
inline bool immutable_forced(const TemporalFeatureVector& factual, const TemporalFeatureVector& x,
                             FeatureIndex i, Period t) {
  if (factual.get(i, t)) return true;
  for (auto u : kPeriods) {
    if (u < t && x.get(i, u)) return true;
  }
  return false;
}

inline const ConditionalTable& table_or_throw(const DependencyGraph& g, const FeatureCatalog& cat,
                                              const Vertex& v) {
  const auto* t = g.table(v);
  if (!t) {
    throw ValidationError("missing conditional table for " + cat.code(v.feature) + " at " +
                          std::string(to_string(v.period)));
  }
  return *t;
}

inline TemporalFeatureVector propagate_deterministic(const FeatureCatalog& cat, const DependencyGraph& g,
                                                     const TemporalFeatureVector& factual,
                                                     const Applied& a) {
  auto x = a.x;
  const std::size_t d = cat.size();
  for (auto t : {Period::Past, Period::Last}) {
    for (FeatureIndex i = 0; i < d; ++i) {
      Vertex v{i, t};
      if (a.pinned[index(t) * d + i]) continue;
      const auto& theta = table_or_throw(g, cat, v);
      bool triggered = false;
      for (const auto* e : g.incoming(v)) {
        const auto& src = e->src;
        if (x.get(src.feature, src.period) == factual.get(src.feature, src.period)) continue;
        if (std::find(theta.parents().begin(), theta.parents().end(), src) != theta.parents().end()) {
          triggered = true;
          break;
        }
      }
      bool bit = x.get(i, t);
      if (triggered) bit = theta.probability(theta.pattern_for(x)) >= 0.5;
      if (cat.is(i, TaxonomyClass::Immutable)) bit = bit || immutable_forced(factual, x, i, t);
      x.set(i, t, bit);
    }
  }
  return x;
}

}  // namespace detail

// Deterministic mode recomputes a vertex only when one of its graph parents
// that the conditional table conditions on has changed, setting it to 1 iff
// the conditional is at least 0.5. Stochastic mode draws every unpinned
// Past/Last vertex from its conditional; the reported vector is the per-bit
// majority (ties keep the record) and the summary carries the sample risk.
// In both modes an Immutable bit present at any period is carried into every
// later one, and never falls below the record. An empty intervention set in
// deterministic mode returns the record unchanged.
inline CounterfactualResult propagate(const FeatureCatalog& cat, const DependencyGraph& graph,
                                      const RiskScorer& model, const Patient& patient,
                                      const std::vector<Intervention>& interventions,
                                      const PropagationConfig& config = {}) {
  if (graph.dim() != cat.size() || patient.features.dim() != cat.size()) {
    throw ValidationError("dimension mismatch between patient, graph and catalog");
  }
  const auto& factual = patient.features;
  auto applied = detail::apply_interventions(cat, factual, interventions);

  if (config.mode == PropagationMode::Deterministic) {
    // nothing applied, nothing to propagate
    auto cf = interventions.empty() ? factual : detail::propagate_deterministic(cat, graph, factual, applied);
    return assemble_result(patient.patient_id, "sequential", factual, std::move(cf), model, cat, graph,
                           config.epsilon);
  }

  if (config.n_samples < 1) throw ValidationError("n_samples must be at least 1", "samples");
  const std::size_t d = cat.size();
  const std::size_t m = factual.flat_size();
  const CounterRng rng(config.seed);
  const auto key = fnv1a(patient.patient_id);
  std::vector<std::size_t> ones(m, 0);
  std::vector<double> p_sum(m, 0.0);
  std::vector<double> risks;
  risks.reserve(config.n_samples);
  for (std::size_t s = 0; s < config.n_samples; ++s) {
    auto x = applied.x;
    for (auto t : {Period::Past, Period::Last}) {
      for (FeatureIndex i = 0; i < d; ++i) {
        auto k = index(t) * d + i;
        if (applied.pinned[k]) continue;
        const auto& theta = detail::table_or_throw(graph, cat, {i, t});
        double p = theta.probability(theta.pattern_for(x));
        p_sum[k] += p;
        bool bit = rng.uniform(key, s, k) < p;
        if (cat.is(i, TaxonomyClass::Immutable)) bit = bit || detail::immutable_forced(factual, x, i, t);
        x.set(i, t, bit);
      }
    }
    for (std::size_t k = 0; k < m; ++k) ones[k] += x.flat(k);
    risks.push_back(model.score(x));
  }

  const auto n = static_cast<double>(config.n_samples);
  SampleSummary summary;
  summary.n_samples = config.n_samples;
  summary.seed = config.seed;
  summary.frequency.resize(m);
  summary.mean_probability.resize(m);
  auto majority = applied.x;
  for (std::size_t k = 0; k < m; ++k) {
    summary.frequency[k] = static_cast<double>(ones[k]) / n;
    bool drawn = k >= d && !applied.pinned[k];
    summary.mean_probability[k] = drawn ? p_sum[k] / n : (majority.flat(k) ? 1.0 : 0.0);
    if (!drawn) continue;
    if (2 * ones[k] > config.n_samples) {
      majority.set_flat(k, true);
    } else if (2 * ones[k] < config.n_samples) {
      majority.set_flat(k, false);
    } else {
      majority.set_flat(k, factual.flat(k));
    }
  }
  double mean = 0;
  for (double r : risks) mean += r;
  mean /= n;
  double var = 0;
  for (double r : risks) var += (r - mean) * (r - mean);
  summary.mean_risk = mean;
  summary.stddev_risk = risks.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;

  auto result = assemble_result(patient.patient_id, "sequential", factual, std::move(majority), model, cat,
                                graph, config.epsilon);
  result.samples = std::move(summary);
  return result;
}

struct RankedCounterfactual {
  std::vector<Intervention> interventions;
  CounterfactualResult result;
};

// Candidates are every set of at most `max_interventions` distinct
// (Intervention feature, History|Past) slots, each toggling the recorded
// bit. Results with no risk reduction are dropped; the rest are ordered by
// plausible first, then larger risk reduction, then fewer changes, then
// enumeration order.
inline std::vector<RankedCounterfactual> search_interventions(const FeatureCatalog& cat,
                                                              const DependencyGraph& graph,
                                                              const RiskScorer& model,
                                                              const Patient& patient,
                                                              const PropagationConfig& config,
                                                              std::size_t max_interventions = 2) {
  std::vector<Intervention> slots;
  for (auto t : {Period::History, Period::Past}) {
    for (auto j : cat.of_class(TaxonomyClass::Intervention)) {
      slots.push_back({j, t, patient.features.get(j, t) ? Action::Remove : Action::Add});
    }
  }
  std::vector<std::vector<Intervention>> sets;
  std::vector<std::size_t> pick;
  auto extend = [&](auto&& self, std::size_t from) -> void {
    if (!pick.empty()) {
      std::vector<Intervention> s;
      for (auto k : pick) s.push_back(slots[k]);
      sets.push_back(std::move(s));
    }
    if (pick.size() == max_interventions) return;
    for (std::size_t k = from; k < slots.size(); ++k) {
      pick.push_back(k);
      self(self, k + 1);
      pick.pop_back();
    }
  };
  extend(extend, 0);

  std::vector<RankedCounterfactual> out;
  for (auto& s : sets) {
    auto r = propagate(cat, graph, model, patient, s, config);
    if (r.metrics.predictive_shift > 0) out.push_back({std::move(s), std::move(r)});
  }
  std::stable_sort(out.begin(), out.end(), [](const RankedCounterfactual& a, const RankedCounterfactual& b) {
    const auto& x = a.result.metrics;
    const auto& y = b.result.metrics;
    if (x.plausible != y.plausible) return x.plausible;
    if (x.predictive_shift != y.predictive_shift) return x.predictive_shift > y.predictive_shift;
    return x.sparsity < y.sparsity;
  });
  return out;
}

inline nlohmann::json to_json(const Intervention& r, const FeatureCatalog& cat) {
  return {{"code", cat.code(r.feature)}, {"period", to_string(r.period)}, {"action", to_string(r.action)}};
}

}  // namespace seqcf
