#pragma once

// Plausibility constraints on a (factual, counterfactual) pair and the cohort
// violation audit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "seqcf/catalog.hpp"
#include "seqcf/cohort.hpp"
#include "seqcf/depgraph.hpp"
#include "seqcf/error.hpp"

namespace seqcf {

enum class Constraint { P1, P2, P3 };

inline std::string_view to_string(Constraint c) {
  switch (c) {
    case Constraint::P1: return "P1";
    case Constraint::P2: return "P2";
    case Constraint::P3: return "P3";
  }
  return "?";
}

struct Violation {
  Constraint constraint = Constraint::P1;
  FeatureIndex feature = 0;
  Period period = Period::History;
  std::string detail;
};

struct PlausibilityVerdict {
  bool p1_ok = true;
  bool p2_ok = true;
  bool p3_ok = true;
  double p3_probability = 0;
  std::vector<Violation> violations;

  bool plausible() const noexcept { return p1_ok && p2_ok && p3_ok; }
};

inline constexpr double kDefaultEpsilon = 1e-4;
inline constexpr double kFactorFloor = 1e-6;

namespace detail {

inline void require_same_dim(const FeatureCatalog& cat, const TemporalFeatureVector& a,
                             const TemporalFeatureVector& b) {
  if (a.dim() != b.dim() || a.dim() != cat.size()) {
    throw ValidationError("dimension mismatch between factual, counterfactual and catalog");
  }
}

}  // namespace detail

// Immutable features: a factual 1 may never become 0, and a bit the
// counterfactual introduces must persist to every later period. Gaps already
// present in the factual record are not the counterfactual's doing.
inline std::vector<Violation> check_p1(const FeatureCatalog& cat, const TemporalFeatureVector& factual,
                                       const TemporalFeatureVector& cf) {
  detail::require_same_dim(cat, factual, cf);
  std::vector<Violation> out;
  for (auto i : cat.of_class(TaxonomyClass::Immutable)) {
    std::set<Period> flagged;
    for (auto t : kPeriods) {
      if (factual.get(i, t) && !cf.get(i, t)) {
        out.push_back({Constraint::P1, i, t, "removes " + cat.code(i) + " present in the record"});
        flagged.insert(t);
      }
    }
    for (auto t : kPeriods) {
      if (!(cf.get(i, t) && !factual.get(i, t))) continue;
      for (auto u : kPeriods) {
        if (u > t && !cf.get(i, u) && !flagged.count(u)) {
          out.push_back({Constraint::P1, i, u,
                         "adds " + cat.code(i) + " at " + std::string(to_string(t)) +
                             " without persisting it"});
          flagged.insert(u);
        }
      }
    }
  }
  return out;
}

// Every changed Controllable or Immutable bit needs an intervention root: an
// Intervention bit at the same or an earlier period that is present or was
// itself changed, with a directed path to it in the graph. An Immutable bit
// added only because an earlier counterfactual bit must persist is exempt.
inline std::vector<Violation> check_p2(const FeatureCatalog& cat, const DependencyGraph& graph,
                                       const TemporalFeatureVector& factual,
                                       const TemporalFeatureVector& cf) {
  detail::require_same_dim(cat, factual, cf);
  if (graph.dim() != cat.size()) throw ValidationError("graph does not match catalog");
  const auto interventions = cat.of_class(TaxonomyClass::Intervention);
  std::vector<Violation> out;
  for (auto tp : kPeriods) {
    for (FeatureIndex i = 0; i < cat.size(); ++i) {
      if (cat.is(i, TaxonomyClass::Intervention) || factual.get(i, tp) == cf.get(i, tp)) continue;
      if (cat.is(i, TaxonomyClass::Immutable) && cf.get(i, tp)) {
        bool persisted = false;
        for (auto t : kPeriods) persisted |= t < tp && cf.get(i, t);
        if (persisted) continue;
      }
      bool rooted = false;
      for (auto j : interventions) {
        for (auto t : kPeriods) {
          if (t > tp) break;
          bool active = cf.get(j, t) || factual.get(j, t) != cf.get(j, t);
          if (active && graph.has_path({j, t}, {i, tp})) {
            rooted = true;
            break;
          }
        }
        if (rooted) break;
      }
      if (!rooted) {
        out.push_back({Constraint::P2, i, tp,
                       std::string(cf.get(i, tp) ? "adds " : "removes ") + cat.code(i) +
                           " with no intervention path"});
      }
    }
  }
  return out;
}

struct P3Result {
  bool ok = true;
  double probability = 0;
};

// Factorized likelihood of the Last period: product over features of the
// conditional of the counterfactual bit given its earlier-period parents.
inline double last_period_likelihood(const DependencyGraph& graph, const TemporalFeatureVector& cf,
                                     const FeatureCatalog* cat = nullptr) {
  if (cf.dim() != graph.dim()) throw ValidationError("dimension mismatch between vector and graph");
  double log_p = 0;
  for (FeatureIndex i = 0; i < graph.dim(); ++i) {
    const auto* t = graph.table({i, Period::Last});
    if (!t) {
      throw ValidationError("missing conditional table for " +
                                (cat ? cat->code(i) : std::to_string(i)) + " at last",
                            cat ? cat->code(i) : std::string{});
    }
    double p = t->probability(t->pattern_for(cf));
    double factor = cf.get(i, Period::Last) ? p : 1.0 - p;
    log_p += std::log(std::max(factor, kFactorFloor));
  }
  return std::exp(log_p);
}

inline P3Result check_p3(const DependencyGraph& graph, const TemporalFeatureVector& cf,
                         double epsilon = kDefaultEpsilon, const FeatureCatalog* cat = nullptr) {
  double p = last_period_likelihood(graph, cf, cat);
  return {p > epsilon, p};
}

// Epsilon at the given quantile of the factual likelihoods of a cohort.
inline double calibrate_epsilon(const DependencyGraph& graph, const Cohort& cohort,
                                double quantile = 0.01) {
  if (cohort.empty()) throw ValidationError("empty cohort");
  if (!(quantile >= 0 && quantile <= 1)) throw ValidationError("quantile out of [0,1]", "quantile");
  std::vector<double> ps;
  ps.reserve(cohort.size());
  for (const auto& p : cohort.patients()) ps.push_back(last_period_likelihood(graph, p.features));
  std::sort(ps.begin(), ps.end());
  auto k = static_cast<std::size_t>(std::floor(quantile * static_cast<double>(ps.size() - 1)));
  return ps[k];
}

inline PlausibilityVerdict evaluate_plausibility(const FeatureCatalog& cat, const DependencyGraph& graph,
                                                 const TemporalFeatureVector& factual,
                                                 const TemporalFeatureVector& cf,
                                                 double epsilon = kDefaultEpsilon) {
  PlausibilityVerdict v;
  v.violations = check_p1(cat, factual, cf);
  v.p1_ok = v.violations.empty();
  auto p2 = check_p2(cat, graph, factual, cf);
  v.p2_ok = p2.empty();
  v.violations.insert(v.violations.end(), p2.begin(), p2.end());
  auto p3 = check_p3(graph, cf, epsilon, &cat);
  v.p3_ok = p3.ok;
  v.p3_probability = p3.probability;
  if (!p3.ok) {
    std::ostringstream os;
    os << "last-period likelihood " << p3.probability << " not above " << epsilon;
    // attributed to the least likely Last-period bit
    FeatureIndex worst = 0;
    double worst_f = 2;
    for (FeatureIndex i = 0; i < cat.size(); ++i) {
      const auto* t = graph.table({i, Period::Last});
      double p = t->probability(t->pattern_for(cf));
      double f = cf.get(i, Period::Last) ? p : 1.0 - p;
      if (f < worst_f) {
        worst_f = f;
        worst = i;
      }
    }
    v.violations.push_back({Constraint::P3, worst, Period::Last, os.str()});
  }
  return v;
}

inline nlohmann::json to_json(const PlausibilityVerdict& v, const FeatureCatalog& cat) {
  nlohmann::json j;
  j["p1_ok"] = v.p1_ok;
  j["p2_ok"] = v.p2_ok;
  j["p3_ok"] = v.p3_ok;
  j["p3_probability"] = v.p3_probability;
  j["plausible"] = v.plausible();
  j["violations"] = nlohmann::json::array();
  for (const auto& x : v.violations) {
    j["violations"].push_back({{"constraint", to_string(x.constraint)},
                               {"code", cat.code(x.feature)},
                               {"period", to_string(x.period)},
                               {"detail", x.detail}});
  }
  return j;
}

// ---------------------------------------------------------------------------
// Cohort audit

struct RateCell {
  std::size_t numerator = 0;
  std::size_t denominator = 0;

  std::optional<double> rate() const {
    if (denominator == 0) return std::nullopt;
    return static_cast<double>(numerator) / static_cast<double>(denominator);
  }
};

struct ViolationReport {
  std::size_t n_patients = 0;
  RateCell p1;
  RateCell p2;
  RateCell any;
  std::map<FeatureIndex, RateCell> feature_p1;  // Immutable features
  std::map<FeatureIndex, RateCell> feature_p2;  // Controllable features
};

// Rates a removal counterfactual would produce, read off factual bits:
// an Immutable code present at Last that was already present at History
// (removing it rewrites history), and a Controllable code present at Last
// with none of its pathway interventions at History (normalizing it has no
// intervention root).
inline ViolationReport audit_naive(const Cohort& cohort) {
  if (cohort.empty()) throw ValidationError("empty cohort");
  const auto& cat = cohort.catalog();
  const auto imm = cat.of_class(TaxonomyClass::Immutable);
  const auto ctl = cat.of_class(TaxonomyClass::Controllable);
  ViolationReport r;
  r.n_patients = cohort.size();
  r.p1.denominator = r.p2.denominator = r.any.denominator = cohort.size();
  for (auto i : imm) r.feature_p1[i];
  for (auto j : ctl) r.feature_p2[j];
  for (const auto& p : cohort.patients()) {
    const auto& x = p.features;
    bool v1 = false, v2 = false;
    for (auto i : imm) {
      if (!x.get(i, Period::Last)) continue;
      auto& cell = r.feature_p1[i];
      ++cell.denominator;
      if (x.get(i, Period::History)) {
        ++cell.numerator;
        v1 = true;
      }
    }
    for (auto j : ctl) {
      if (!x.get(j, Period::Last)) continue;
      auto& cell = r.feature_p2[j];
      ++cell.denominator;
      bool treated = false;
      for (auto k : cat.interventions_for(j)) treated |= x.get(k, Period::History);
      if (!treated) {
        ++cell.numerator;
        v2 = true;
      }
    }
    r.p1.numerator += v1;
    r.p2.numerator += v2;
    r.any.numerator += v1 || v2;
  }
  return r;
}

inline nlohmann::json to_json(const RateCell& c) {
  auto r = c.rate();
  return {{"numerator", c.numerator},
          {"denominator", c.denominator},
          {"rate", r ? nlohmann::json(*r) : nlohmann::json(nullptr)}};
}

inline nlohmann::json to_json(const ViolationReport& r, const FeatureCatalog& cat) {
  nlohmann::json j;
  j["n_patients"] = r.n_patients;
  j["patient_level"] = {{"p1", to_json(r.p1)}, {"p2", to_json(r.p2)}, {"any", to_json(r.any)}};
  j["feature_level_p1"] = nlohmann::json::object();
  for (const auto& [f, c] : r.feature_p1) j["feature_level_p1"][cat.code(f)] = to_json(c);
  j["feature_level_p2"] = nlohmann::json::object();
  for (const auto& [f, c] : r.feature_p2) j["feature_level_p2"][cat.code(f)] = to_json(c);
  return j;
}

namespace detail {

inline std::string percent(const RateCell& c) {
  auto r = c.rate();
  if (!r) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << 100.0 * *r;
  return os.str();
}

inline void rate_row(std::ostringstream& os, const std::string& name, const RateCell& c) {
  os << "  " << std::left << std::setw(22) << name << std::right << std::setw(8) << c.numerator
     << " / " << std::left << std::setw(8) << c.denominator << std::right << std::setw(7)
     << percent(c) << "\n";
}

}  // namespace detail

inline std::string render_text(const ViolationReport& r, const FeatureCatalog& cat) {
  std::ostringstream os;
  os << "Violation audit (n = " << r.n_patients << ")\n";
  os << "Patient level\n";
  detail::rate_row(os, "P1 (immutability)", r.p1);
  detail::rate_row(os, "P2 (coherence)", r.p2);
  detail::rate_row(os, "Any violation", r.any);
  os << "Feature level P1\n";
  for (const auto& [f, c] : r.feature_p1) detail::rate_row(os, cat.code(f), c);
  os << "Feature level P2\n";
  for (const auto& [f, c] : r.feature_p2) detail::rate_row(os, cat.code(f), c);
  return os.str();
}

}  // namespace seqcf
