#pragma once

// Artifact snapshot and the request handlers shared by the CLI and the HTTP
// service, so both frontends emit identical JSON for identical inputs.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "seqcf/cascade.hpp"
#include "seqcf/catalog.hpp"
#include "seqcf/cohort.hpp"
#include "seqcf/counterfactual.hpp"
#include "seqcf/depgraph.hpp"
#include "seqcf/error.hpp"
#include "seqcf/naivecf.hpp"
#include "seqcf/plausibility.hpp"
#include "seqcf/riskmodel.hpp"
#include "seqcf/rng.hpp"
#include "seqcf/seqcf.hpp"

namespace seqcf {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string(), path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Write to a sibling temp file and rename, so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw RuntimeError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw RuntimeError("cannot move output into place: " + path.string());
  }
}

inline nlohmann::json parse_json(std::string_view text, const std::string& what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(what + " is not valid JSON: " + e.what(), what);
  }
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct Snapshot {
  std::shared_ptr<const FeatureCatalog> catalog;
  Cohort cohort;
  DependencyGraph graph;
  RiskModel model;
  std::string id;
  double epsilon = kDefaultEpsilon;
};

inline constexpr const char* kArtifactFiles[] = {"catalog.json", "cohort.csv", "graph.json", "model.json"};

// Reads catalog.json, cohort.csv, graph.json and model.json from `dir` and
// checks they agree on the feature dimension.
inline Snapshot load_snapshot(const std::filesystem::path& dir, double epsilon = kDefaultEpsilon) {
  Snapshot s;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::vector<std::string> bytes;
  for (const auto* name : kArtifactFiles) {
    bytes.push_back(read_file(dir / name));
    h = fnv1a(name, h);
    h = fnv1a(bytes.back(), h);
  }
  s.catalog = std::make_shared<const FeatureCatalog>(load_catalog(bytes[0]));
  s.cohort = load_cohort(bytes[1], s.catalog, CohortFormat::Csv);
  s.graph = graph_from_json(parse_json(bytes[2], "graph.json"), *s.catalog);
  s.model = risk_model_from_json(parse_json(bytes[3], "model.json"));
  if (s.model.dim() != s.catalog->size()) {
    throw ValidationError("model dimension " + std::to_string(s.model.dim()) + " does not match catalog " +
                          std::to_string(s.catalog->size()));
  }
  s.id = hex64(h);
  s.epsilon = epsilon;
  return s;
}

// ---------------------------------------------------------------------------
// Counterfactual requests

struct InterventionSpec {
  std::string code;
  std::string period;
  std::string action = "add";
};

struct CfRequest {
  std::string patient_id;
  std::string mode = "sequential";  // naive | sequential
  std::vector<InterventionSpec> interventions;
  double theta = 0.5;
  std::string propagation = "deterministic";
  std::size_t samples = 200;
  std::uint64_t seed = 0;
  std::size_t max_changes = 5;
};

// Raised when the naive search finds nothing within its change budget.
class NoCounterfactualError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline CfRequest cf_request_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("request body must be a JSON object");
  CfRequest r;
  try {
    if (!j.contains("patient_id") || !j.at("patient_id").is_string()) {
      throw ValidationError("patient_id is required", "patient_id");
    }
    r.patient_id = j.at("patient_id").get<std::string>();
    r.mode = j.value("mode", r.mode);
    r.theta = j.value("theta", r.theta);
    r.propagation = j.value("propagation", r.propagation);
    r.samples = j.value("samples", r.samples);
    r.seed = j.value("seed", r.seed);
    r.max_changes = j.value("max_changes", r.max_changes);
    if (j.contains("interventions")) {
      for (const auto& ji : j.at("interventions")) {
        InterventionSpec s;
        s.code = ji.at("code").get<std::string>();
        s.period = ji.at("period").get<std::string>();
        s.action = ji.value("action", s.action);
        r.interventions.push_back(std::move(s));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed request: ") + e.what());
  }
  return r;
}

inline Intervention resolve(const FeatureCatalog& cat, const InterventionSpec& s) {
  auto period = parse_period(s.period);
  if (!period) throw ValidationError("unknown period: " + s.period, "period");
  auto action = parse_action(s.action);
  if (!action) throw ValidationError("unknown action: " + s.action, "action");
  return make_intervention(cat, s.code, *period, *action);
}

inline nlohmann::json run_counterfactual(const Snapshot& snap, const CfRequest& req) {
  const auto& cat = *snap.catalog;
  const auto& patient = snap.cohort.find(req.patient_id);
  if (!(req.theta > 0 && req.theta < 1)) throw ValidationError("theta must lie in (0, 1)", "theta");
  if (req.mode == "naive") {
    if (!req.interventions.empty()) {
      throw ValidationError("naive mode takes no interventions", "interventions");
    }
    NaiveCfConfig c;
    c.risk_threshold = req.theta;
    c.max_changes = req.max_changes;
    auto r = generate_naive(snap.model, patient, cat, snap.graph, c, snap.epsilon);
    if (!r) {
      throw NoCounterfactualError("no flip set of at most " + std::to_string(req.max_changes) +
                                  " bits brings the risk below theta");
    }
    auto j = to_json(*r, cat);
    j["theta"] = req.theta;
    return j;
  }
  if (req.mode != "sequential") throw ValidationError("mode must be naive or sequential", "mode");
  auto pm = parse_propagation_mode(req.propagation);
  if (!pm) throw ValidationError("propagation must be deterministic or stochastic", "propagation");
  std::vector<Intervention> rs;
  for (const auto& s : req.interventions) rs.push_back(resolve(cat, s));
  PropagationConfig c;
  c.mode = *pm;
  c.n_samples = req.samples;
  c.seed = req.seed;
  c.risk_threshold = req.theta;
  c.epsilon = snap.epsilon;
  auto r = propagate(cat, snap.graph, snap.model, patient, rs, c);
  auto j = to_json(r, cat);
  j["theta"] = req.theta;
  j["propagation"] = std::string(to_string(*pm));
  j["interventions"] = nlohmann::json::array();
  for (const auto& x : rs) j["interventions"].push_back(to_json(x, cat));
  return j;
}

// ---------------------------------------------------------------------------
// Read-only views

inline bool has_immutable_conditions(const FeatureCatalog& cat, const TemporalFeatureVector& x) {
  for (auto i : cat.of_class(TaxonomyClass::Immutable)) {
    for (auto t : kPeriods) {
      if (x.get(i, t)) return true;
    }
  }
  return false;
}

inline nlohmann::json patients_page(const Snapshot& snap, std::size_t limit, std::size_t offset,
                                    double min_risk) {
  nlohmann::json rows = nlohmann::json::array();
  std::size_t matched = 0;
  for (const auto& p : snap.cohort.patients()) {
    double y = snap.model.score(p.features);
    if (y < min_risk) continue;
    if (matched >= offset && rows.size() < limit) {
      rows.push_back({{"patient_id", p.patient_id},
                      {"y", p.outcome ? 1 : 0},
                      {"y_hat", y},
                      {"flags", {{"has_immutable_conditions", has_immutable_conditions(*snap.catalog, p.features)}}}});
    }
    ++matched;
  }
  return {{"total", snap.cohort.size()},
          {"matched", matched},
          {"limit", limit},
          {"offset", offset},
          {"patients", rows}};
}

inline nlohmann::json patient_detail(const Snapshot& snap, const std::string& id) {
  const auto& cat = *snap.catalog;
  const auto& p = snap.cohort.find(id);
  nlohmann::json periods;
  for (auto t : kPeriods) {
    auto feats = nlohmann::json::array();
    for (FeatureIndex i = 0; i < cat.size(); ++i) {
      feats.push_back({{"code", cat.code(i)},
                       {"label", cat.feature(i).label},
                       {"class", to_string(cat.cls(i))},
                       {"present", p.features.get(i, t)}});
    }
    periods[std::string(to_string(t))] = std::move(feats);
  }
  return {{"patient_id", p.patient_id},
          {"y", p.outcome ? 1 : 0},
          {"y_hat", snap.model.score(p.features)},
          {"periods", periods}};
}

inline nlohmann::json audit_json(const Cohort& cohort) {
  return to_json(audit_naive(cohort), cohort.catalog());
}

inline nlohmann::json cascade_report_json(const Cohort& cohort) {
  return cascade_json(cascade_report(cohort), insulin_profile(cohort), cohort.catalog());
}

}  // namespace seqcf
