#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "seqcf/error.hpp"

namespace seqcf {

using FeatureIndex = std::size_t;

enum class TaxonomyClass { Immutable, Controllable, Intervention };

inline std::string_view to_string(TaxonomyClass c) {
  switch (c) {
    case TaxonomyClass::Immutable: return "immutable";
    case TaxonomyClass::Controllable: return "controllable";
    case TaxonomyClass::Intervention: return "intervention";
  }
  return "?";
}

inline std::optional<TaxonomyClass> parse_taxonomy_class(std::string_view s) {
  if (s == "immutable") return TaxonomyClass::Immutable;
  if (s == "controllable") return TaxonomyClass::Controllable;
  if (s == "intervention") return TaxonomyClass::Intervention;
  return std::nullopt;
}

struct Feature {
  FeatureIndex id = 0;
  std::string code;
  std::string label;
  TaxonomyClass cls = TaxonomyClass::Controllable;
};

struct InterventionPathway {
  FeatureIndex intervention = 0;
  FeatureIndex target = 0;
  std::string mechanism;  // documentation only

  friend bool operator==(const InterventionPathway& a,
                         const InterventionPathway& b) {
    return a.intervention == b.intervention && a.target == b.target;
  }
};

// The feature universe with its taxonomy partition and the mechanistic
// intervention -> controllable pathways. Immutable once built.
class FeatureCatalog {
 public:
  FeatureCatalog() = default;

  // Validates every invariant; throws ValidationError naming the offending
  // code on failure.
  static FeatureCatalog build(std::vector<Feature> features,
                              std::vector<InterventionPathway> pathways) {
    FeatureCatalog cat;
    for (std::size_t i = 0; i < features.size(); ++i) {
      auto& f = features[i];
      f.id = i;
      if (f.code.empty()) {
        throw ValidationError("feature " + std::to_string(i) + " has empty code",
                              "features");
      }
      if (!cat.by_code_.emplace(f.code, i).second) {
        throw ValidationError("duplicate code: " + f.code, f.code);
      }
    }
    cat.features_ = std::move(features);
    std::set<std::pair<FeatureIndex, FeatureIndex>> seen;
    for (const auto& p : pathways) {
      if (p.intervention >= cat.size() || p.target >= cat.size()) {
        throw ValidationError("pathway references unknown feature", "pathways");
      }
      const auto& from = cat.features_[p.intervention];
      const auto& to = cat.features_[p.target];
      if (from.cls != TaxonomyClass::Intervention) {
        throw ValidationError(
            "pathway source not Intervention: " + from.code, from.code);
      }
      if (to.cls != TaxonomyClass::Controllable) {
        throw ValidationError("pathway target not Controllable: " + to.code,
                              to.code);
      }
      if (!seen.emplace(p.intervention, p.target).second) {
        throw ValidationError(
            "duplicate pathway: " + from.code + "->" + to.code, from.code);
      }
    }
    cat.pathways_ = std::move(pathways);
    return cat;
  }

  std::size_t size() const noexcept { return features_.size(); }
  const std::vector<Feature>& features() const noexcept { return features_; }
  const Feature& feature(FeatureIndex i) const { return features_.at(i); }
  const std::string& code(FeatureIndex i) const { return features_.at(i).code; }
  TaxonomyClass cls(FeatureIndex i) const { return features_.at(i).cls; }
  bool is(FeatureIndex i, TaxonomyClass c) const { return cls(i) == c; }

  const std::vector<InterventionPathway>& pathways() const noexcept {
    return pathways_;
  }

  std::optional<FeatureIndex> find(std::string_view code) const {
    auto it = by_code_.find(std::string(code));
    if (it == by_code_.end()) return std::nullopt;
    return it->second;
  }

  FeatureIndex index_of(std::string_view code) const {
    auto idx = find(code);
    if (!idx) {
      throw NotFoundError("unknown feature code: " + std::string(code),
                          std::string(code));
    }
    return *idx;
  }

  std::vector<FeatureIndex> of_class(TaxonomyClass c) const {
    std::vector<FeatureIndex> out;
    for (const auto& f : features_) {
      if (f.cls == c) out.push_back(f.id);
    }
    return out;
  }

  // Interventions with a declared pathway into `target`.
  std::vector<FeatureIndex> interventions_for(FeatureIndex target) const {
    std::vector<FeatureIndex> out;
    for (const auto& p : pathways_) {
      if (p.target == target) out.push_back(p.intervention);
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["features"] = nlohmann::json::array();
    for (const auto& f : features_) {
      j["features"].push_back(
          {{"code", f.code}, {"label", f.label}, {"class", to_string(f.cls)}});
    }
    j["pathways"] = nlohmann::json::array();
    for (const auto& p : pathways_) {
      j["pathways"].push_back({{"intervention", code(p.intervention)},
                               {"target", code(p.target)},
                               {"mechanism", p.mechanism}});
    }
    return j;
  }

 private:
  std::vector<Feature> features_;
  std::vector<InterventionPathway> pathways_;
  std::unordered_map<std::string, FeatureIndex> by_code_;
};

inline FeatureCatalog catalog_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("catalog must be a JSON object");
  std::vector<Feature> features;
  std::unordered_map<std::string, FeatureIndex> idx;
  if (j.contains("features")) {
    for (const auto& jf : j.at("features")) {
      Feature f;
      f.code = jf.value("code", std::string{});
      f.label = jf.value("label", f.code);
      if (!jf.contains("class") || !jf.at("class").is_string()) {
        throw ValidationError("missing class for feature: " + f.code, f.code);
      }
      auto c = parse_taxonomy_class(jf.at("class").get<std::string>());
      if (!c) {
        throw ValidationError("invalid class for feature: " + f.code, f.code);
      }
      f.cls = *c;
      idx.emplace(f.code, features.size());
      features.push_back(std::move(f));
    }
  }
  std::vector<InterventionPathway> pathways;
  if (j.contains("pathways")) {
    for (const auto& jp : j.at("pathways")) {
      auto from = jp.value("intervention", std::string{});
      auto to = jp.value("target", std::string{});
      auto fi = idx.find(from);
      auto ti = idx.find(to);
      if (fi == idx.end()) {
        throw ValidationError("pathway references unknown feature: " + from,
                              from);
      }
      if (ti == idx.end()) {
        throw ValidationError("pathway references unknown feature: " + to, to);
      }
      pathways.push_back({fi->second, ti->second, jp.value("mechanism", "")});
    }
  }
  return FeatureCatalog::build(std::move(features), std::move(pathways));
}

inline FeatureCatalog load_catalog(std::string_view source) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(source);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("catalog is not valid JSON: ") + e.what());
  }
  return catalog_from_json(j);
}

// The concepts named for the Long COVID heart-failure application.
inline FeatureCatalog default_catalog() {
  using C = TaxonomyClass;
  std::vector<Feature> f = {
      {0, "E11", "Type 2 diabetes", C::Immutable},
      {0, "I10", "Hypertension", C::Immutable},
      {0, "N18", "Chronic kidney disease", C::Immutable},
      {0, "I50", "Heart failure", C::Immutable},
      {0, "E66", "Obesity", C::Immutable},
      {0, "Glucose_H", "Elevated glucose", C::Controllable},
      {0, "Creatinine_H", "Elevated creatinine", C::Controllable},
      {0, "Troponin_H", "Elevated troponin", C::Controllable},
      {0, "N17", "Acute kidney injury", C::Controllable},
      {0, "Lisinopril", "Lisinopril (ACE inhibitor)", C::Intervention},
      {0, "Insulin", "Insulin", C::Intervention},
      {0, "Metoprolol", "Metoprolol", C::Intervention},
      {0, "Atorvastatin", "Atorvastatin", C::Intervention},
      {0, "LoopDiuretic", "Loop diuretic", C::Intervention},
  };
  auto at = [&](std::string_view code) -> FeatureIndex {
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (f[i].code == code) return i;
    }
    throw RuntimeError("default catalog misses " + std::string(code));
  };
  std::vector<InterventionPathway> p = {
      {at("Insulin"), at("Glucose_H"), "glycemic control"},
      {at("Lisinopril"), at("N17"), "renoprotection: AKI prevention"},
      {at("Lisinopril"), at("Creatinine_H"), "renoprotection: creatinine stabilization"},
      {at("LoopDiuretic"), at("Creatinine_H"), "volume management"},
  };
  return FeatureCatalog::build(std::move(f), std::move(p));
}

}  // namespace seqcf
