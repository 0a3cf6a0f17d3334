#pragma once

// Counterfactual result record and the four quality metrics shared by the
// naive and sequential generators.

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "seqcf/catalog.hpp"
#include "seqcf/cohort.hpp"
#include "seqcf/depgraph.hpp"
#include "seqcf/plausibility.hpp"
#include "seqcf/riskmodel.hpp"

namespace seqcf {

struct Change {
  FeatureIndex feature = 0;
  Period period = Period::History;
  bool added = false;

  friend bool operator==(const Change&, const Change&) = default;
};

// Symmetric difference in (period, feature) order.
inline std::vector<Change> diff(const TemporalFeatureVector& factual, const TemporalFeatureVector& cf) {
  if (factual.dim() != cf.dim()) throw ValidationError("dimension mismatch");
  std::vector<Change> out;
  for (auto t : kPeriods) {
    for (FeatureIndex i = 0; i < factual.dim(); ++i) {
      if (factual.get(i, t) != cf.get(i, t)) out.push_back({i, t, cf.get(i, t)});
    }
  }
  return out;
}

struct QualityMetrics {
  double predictive_shift = 0;  // f(factual) - f(cf)
  bool plausible = false;
  bool actionable = false;
  std::size_t sparsity = 0;
};

inline QualityMetrics compute_metrics(const RiskScorer& model, const TemporalFeatureVector& factual,
                                      const TemporalFeatureVector& cf, const FeatureCatalog& cat,
                                      const PlausibilityVerdict& verdict) {
  if (factual.dim() != cat.size() || cf.dim() != cat.size()) {
    throw ValidationError("dimension mismatch between vectors and catalog");
  }
  QualityMetrics m;
  m.predictive_shift = model.score(factual) - model.score(cf);
  m.plausible = verdict.plausible();
  m.sparsity = factual.hamming(cf);
  for (auto j : cat.of_class(TaxonomyClass::Intervention)) {
    for (auto t : kPeriods) m.actionable |= factual.get(j, t) != cf.get(j, t);
  }
  return m;
}

inline QualityMetrics compute_metrics(const RiskScorer& model, const TemporalFeatureVector& factual,
                                      const TemporalFeatureVector& cf, const FeatureCatalog& cat,
                                      const DependencyGraph& graph, double epsilon = kDefaultEpsilon) {
  return compute_metrics(model, factual, cf, cat, evaluate_plausibility(cat, graph, factual, cf, epsilon));
}

// Monte Carlo summary attached to stochastic propagation results. Per-vertex
// arrays are indexed in flattened (period, feature) order.
struct SampleSummary {
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
  double mean_risk = 0;
  double stddev_risk = 0;
  std::vector<double> frequency;         // share of samples with the bit set
  std::vector<double> mean_probability;  // mean conditional used to draw it
};

struct CounterfactualResult {
  std::string patient_id;
  std::string mode;  // "naive" or "sequential"
  TemporalFeatureVector factual;
  TemporalFeatureVector counterfactual;
  std::vector<Change> changed;
  double y_factual = 0;
  double y_cf = 0;
  QualityMetrics metrics;
  PlausibilityVerdict plausibility;
  std::optional<SampleSummary> samples;
};

inline CounterfactualResult assemble_result(std::string patient_id, std::string mode,
                                            const TemporalFeatureVector& factual,
                                            TemporalFeatureVector cf, const RiskScorer& model,
                                            const FeatureCatalog& cat, const DependencyGraph& graph,
                                            double epsilon = kDefaultEpsilon) {
  CounterfactualResult r;
  r.patient_id = std::move(patient_id);
  r.mode = std::move(mode);
  r.factual = factual;
  r.changed = diff(factual, cf);
  r.counterfactual = std::move(cf);
  r.y_factual = model.score(r.factual);
  r.y_cf = model.score(r.counterfactual);
  r.plausibility = evaluate_plausibility(cat, graph, r.factual, r.counterfactual, epsilon);
  r.metrics = compute_metrics(model, r.factual, r.counterfactual, cat, r.plausibility);
  return r;
}

inline nlohmann::json vector_json(const TemporalFeatureVector& tau, const FeatureCatalog& cat) {
  nlohmann::json j;
  for (auto t : kPeriods) {
    auto codes = nlohmann::json::array();
    for (FeatureIndex i = 0; i < tau.dim(); ++i) {
      if (tau.get(i, t)) codes.push_back(cat.code(i));
    }
    j[std::string(to_string(t))] = std::move(codes);
  }
  return j;
}

inline nlohmann::json to_json(const CounterfactualResult& r, const FeatureCatalog& cat) {
  nlohmann::json j;
  j["patient_id"] = r.patient_id;
  j["mode"] = r.mode;
  j["factual"] = vector_json(r.factual, cat);
  j["counterfactual"] = vector_json(r.counterfactual, cat);
  j["changed"] = nlohmann::json::array();
  for (const auto& c : r.changed) {
    j["changed"].push_back({{"code", cat.code(c.feature)},
                            {"class", to_string(cat.cls(c.feature))},
                            {"period", to_string(c.period)},
                            {"direction", c.added ? "added" : "removed"}});
  }
  j["y_factual"] = r.y_factual;
  j["y_cf"] = r.y_cf;
  j["delta_y"] = r.y_factual - r.y_cf;
  j["metrics"] = {{"predictive_shift", r.metrics.predictive_shift},
                  {"plausible", r.metrics.plausible},
                  {"actionable", r.metrics.actionable},
                  {"sparsity", r.metrics.sparsity}};
  j["plausibility"] = to_json(r.plausibility, cat);
  if (r.samples) {
    const auto& s = *r.samples;
    nlohmann::json js;
    js["n_samples"] = s.n_samples;
    js["seed"] = s.seed;
    js["mean_y_cf"] = s.mean_risk;
    js["stddev_y_cf"] = s.stddev_risk;
    js["mean_delta_y"] = r.y_factual - s.mean_risk;
    js["vertices"] = nlohmann::json::array();
    const std::size_t d = cat.size();
    for (auto t : {Period::Past, Period::Last}) {
      for (FeatureIndex i = 0; i < d; ++i) {
        auto k = index(t) * d + i;
        js["vertices"].push_back({{"code", cat.code(i)},
                                  {"period", to_string(t)},
                                  {"frequency", s.frequency[k]},
                                  {"mean_probability", s.mean_probability[k]}});
      }
    }
    j["samples"] = std::move(js);
  }
  return j;
}

}  // namespace seqcf
