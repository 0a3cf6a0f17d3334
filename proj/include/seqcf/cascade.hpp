#pragma once

// Stratified relative risks: the cardiorenal cascade and the treated vs
// untreated baseline profile.

#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "seqcf/cohort.hpp"
#include "seqcf/depgraph.hpp"
#include "seqcf/error.hpp"

namespace seqcf {

// A (feature, period) bit, or the patient outcome label when empty.
struct Endpoint {
  std::optional<Vertex> vertex;

  static Endpoint outcome() { return {}; }
  static Endpoint bit(FeatureIndex f, Period t) { return {Vertex{f, t}}; }

  bool of(const Patient& p) const {
    return vertex ? p.features.get(vertex->feature, vertex->period) : p.outcome;
  }
};

struct CascadeStep {
  Vertex exposure;
  Endpoint outcome;
  std::vector<Vertex> excluded;  // patients with any of these bits set were dropped
  std::size_t n_exposed = 0;
  std::size_t k_exposed = 0;
  std::size_t n_unexposed = 0;
  std::size_t k_unexposed = 0;
  double p_exposed = 0;
  double p_unexposed = 0;
  double relative_risk = 0;
};

// Zero cells are errors rather than being smoothed away.
inline CascadeStep relative_risk(const Cohort& cohort, Vertex exposure, Endpoint outcome,
                                 std::vector<Vertex> exclude = {}) {
  const auto d = cohort.catalog().size();
  if (exposure.feature >= d) throw NotFoundError("unknown exposure feature");
  if (outcome.vertex && outcome.vertex->feature >= d) throw NotFoundError("unknown outcome feature");
  CascadeStep s;
  s.exposure = exposure;
  s.outcome = outcome;
  s.excluded = std::move(exclude);
  for (const auto& p : cohort.patients()) {
    bool drop = false;
    for (const auto& v : s.excluded) drop |= p.features.get(v.feature, v.period);
    if (drop) continue;
    bool y = outcome.of(p);
    if (p.features.get(exposure.feature, exposure.period)) {
      ++s.n_exposed;
      s.k_exposed += y;
    } else {
      ++s.n_unexposed;
      s.k_unexposed += y;
    }
  }
  if (s.n_exposed == 0) throw ValidationError("empty stratum: exposed");
  if (s.n_unexposed == 0) throw ValidationError("empty stratum: unexposed");
  s.p_exposed = static_cast<double>(s.k_exposed) / static_cast<double>(s.n_exposed);
  s.p_unexposed = static_cast<double>(s.k_unexposed) / static_cast<double>(s.n_unexposed);
  if (s.k_unexposed == 0) throw ValidationError("empty stratum: no outcomes among unexposed");
  s.relative_risk = s.p_exposed / s.p_unexposed;
  return s;
}

// CKD at History -> AKI at Last among patients without AKI at History, then
// AKI at Last -> outcome label.
inline std::vector<CascadeStep> cascade_report(const Cohort& cohort) {
  if (cohort.empty()) throw ValidationError("empty cohort");
  const auto& cat = cohort.catalog();
  auto ckd = cat.index_of("N18");
  auto aki = cat.index_of("N17");
  return {relative_risk(cohort, {ckd, Period::History}, Endpoint::bit(aki, Period::Last),
                        {{aki, Period::History}}),
          relative_risk(cohort, {aki, Period::Last}, Endpoint::outcome())};
}

struct ProfileRow {
  Vertex stratifier;
  std::size_t k_treated = 0;
  std::size_t k_untreated = 0;
  double p_treated = 0;
  double p_untreated = 0;
  std::optional<double> ratio;  // empty when the untreated rate is zero
};

struct ConfoundingProfile {
  Vertex treatment;
  std::optional<Vertex> population;  // restrict to patients with this bit set
  std::size_t n_treated = 0;
  std::size_t n_untreated = 0;
  std::vector<ProfileRow> rows;
};

inline ConfoundingProfile confounding_profile(const Cohort& cohort, Vertex treatment,
                                              const std::vector<Vertex>& stratifiers,
                                              std::optional<Vertex> population = std::nullopt) {
  ConfoundingProfile out;
  out.treatment = treatment;
  out.population = population;
  std::vector<const Patient*> treated, untreated;
  for (const auto& p : cohort.patients()) {
    if (population && !p.features.get(population->feature, population->period)) continue;
    (p.features.get(treatment.feature, treatment.period) ? treated : untreated).push_back(&p);
  }
  if (treated.empty()) throw ValidationError("empty treatment group: treated");
  if (untreated.empty()) throw ValidationError("empty treatment group: untreated");
  out.n_treated = treated.size();
  out.n_untreated = untreated.size();
  for (const auto& v : stratifiers) {
    ProfileRow row;
    row.stratifier = v;
    for (const auto* p : treated) row.k_treated += p->features.get(v.feature, v.period);
    for (const auto* p : untreated) row.k_untreated += p->features.get(v.feature, v.period);
    row.p_treated = static_cast<double>(row.k_treated) / static_cast<double>(out.n_treated);
    row.p_untreated = static_cast<double>(row.k_untreated) / static_cast<double>(out.n_untreated);
    if (row.p_untreated > 0) row.ratio = row.p_treated / row.p_untreated;
    out.rows.push_back(row);
  }
  return out;
}

// Insulin at History among diabetics against CKD, prior AKI and prior HF at
// History and elevated glucose at Last.
inline ConfoundingProfile insulin_profile(const Cohort& cohort) {
  const auto& cat = cohort.catalog();
  auto h = Period::History;
  return confounding_profile(cohort, {cat.index_of("Insulin"), h},
                             {{cat.index_of("N18"), h},
                              {cat.index_of("N17"), h},
                              {cat.index_of("I50"), h},
                              {cat.index_of("Glucose_H"), Period::Last}},
                             Vertex{cat.index_of("E11"), h});
}

// ---------------------------------------------------------------------------

inline std::string endpoint_name(const Endpoint& e, const FeatureCatalog& cat) {
  if (!e.vertex) return "outcome";
  return cat.code(e.vertex->feature) + "_" + std::string(to_string(e.vertex->period));
}

inline std::string vertex_name(const Vertex& v, const FeatureCatalog& cat) {
  return cat.code(v.feature) + "_" + std::string(to_string(v.period));
}

inline nlohmann::json to_json(const CascadeStep& s, const FeatureCatalog& cat) {
  nlohmann::json ex = nlohmann::json::array();
  for (const auto& v : s.excluded) ex.push_back(vertex_json(cat, v));
  return {{"exposure", vertex_json(cat, s.exposure)},
          {"outcome", s.outcome.vertex ? vertex_json(cat, *s.outcome.vertex) : nlohmann::json("outcome")},
          {"excluded", ex},
          {"n_exposed", s.n_exposed},
          {"k_exposed", s.k_exposed},
          {"n_unexposed", s.n_unexposed},
          {"k_unexposed", s.k_unexposed},
          {"p_exposed", s.p_exposed},
          {"p_unexposed", s.p_unexposed},
          {"relative_risk", s.relative_risk}};
}

inline nlohmann::json to_json(const ConfoundingProfile& p, const FeatureCatalog& cat) {
  nlohmann::json j;
  j["treatment"] = vertex_json(cat, p.treatment);
  j["population"] = p.population ? vertex_json(cat, *p.population) : nlohmann::json(nullptr);
  j["n_treated"] = p.n_treated;
  j["n_untreated"] = p.n_untreated;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : p.rows) {
    j["rows"].push_back({{"stratifier", vertex_json(cat, r.stratifier)},
                         {"k_treated", r.k_treated},
                         {"k_untreated", r.k_untreated},
                         {"p_treated", r.p_treated},
                         {"p_untreated", r.p_untreated},
                         {"ratio", r.ratio ? nlohmann::json(*r.ratio) : nlohmann::json(nullptr)}});
  }
  return j;
}

inline nlohmann::json cascade_json(const std::vector<CascadeStep>& steps, const ConfoundingProfile& profile,
                                   const FeatureCatalog& cat) {
  nlohmann::json j;
  j["steps"] = nlohmann::json::array();
  for (const auto& s : steps) j["steps"].push_back(to_json(s, cat));
  j["confounding"] = to_json(profile, cat);
  return j;
}

inline std::string render_text(const std::vector<CascadeStep>& steps, const ConfoundingProfile& profile,
                               const FeatureCatalog& cat) {
  std::ostringstream os;
  os << std::fixed;
  os << "Cascade\n";
  os << "  " << std::left << std::setw(30) << "exposure -> outcome" << std::right << std::setw(10)
     << "n_exp" << std::setw(10) << "p_exp" << std::setw(10) << "n_unexp" << std::setw(10) << "p_unexp"
     << std::setw(8) << "RR" << "\n";
  for (const auto& s : steps) {
    os << "  " << std::left << std::setw(30)
       << (vertex_name(s.exposure, cat) + " -> " + endpoint_name(s.outcome, cat)) << std::right
       << std::setw(10) << s.n_exposed << std::setw(10) << std::setprecision(3) << s.p_exposed
       << std::setw(10) << s.n_unexposed << std::setw(10) << s.p_unexposed << std::setw(8)
       << std::setprecision(2) << s.relative_risk << "\n";
  }
  os << "Treated vs untreated: " << vertex_name(profile.treatment, cat);
  if (profile.population) os << " among " << vertex_name(*profile.population, cat);
  os << " (n = " << profile.n_treated << " / " << profile.n_untreated << ")\n";
  for (const auto& r : profile.rows) {
    os << "  " << std::left << std::setw(30) << vertex_name(r.stratifier, cat) << std::right
       << std::setprecision(3) << std::setw(10) << r.p_treated << std::setw(10) << r.p_untreated;
    if (r.ratio) {
      os << std::setw(8) << std::setprecision(2) << *r.ratio;
    } else {
      os << std::setw(8) << "n/a";
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace seqcf
