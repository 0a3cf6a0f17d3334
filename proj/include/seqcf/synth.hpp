#pragma once

// Synthetic cohort generator calibrated to the Long COVID heart-failure
// cohort statistics (prevalences, persistence, cardiorenal cascade, insulin
// confounding by indication).
//
// Sampling is ancestral History -> Past -> Last -> outcome. Every binary
// column is filled by exact-quota selection inside a stratum: a stratum of m
// patients with target rate r gets exactly round(r * m) positives, chosen as
// the top-k patients by (Gumbel noise + association score). Noise comes from
// a counter-based stream keyed by (seed, step, patient, feature), so draws do
// not depend on evaluation order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "seqcf/catalog.hpp"
#include "seqcf/cohort.hpp"
#include "seqcf/error.hpp"
#include "seqcf/rng.hpp"

namespace seqcf {

struct PersistenceParams {
  double p_given_present = 0;
  double p_given_absent = 0;
};

struct CascadeParams {
  double rr_ckd_to_aki = 2.27;
  double rr_aki_to_hf = 1.19;
  double p_aki_given_no_ckd = 0.030;
  // Checked by the calibration report; generation derives the base rate
  // from case_fraction and rr_aki_to_hf.
  double p_hf_given_no_aki = 0.138;
  // AKI rate at Last among patients with AKI already in History.
  double p_aki_given_prior_aki = 0.223;
  // Multiplies every AKI-at-Last rate for patients on Lisinopril in History.
  // 1.0 leaves the calibrated cohort unchanged; < 1 encodes renoprotection.
  double lisinopril_aki_multiplier = 1.0;
};

struct ConfoundingParams {
  double insulin_rate_diabetic = 605.0 / 1239.0;
  double insulin_rate_other = 0.05;
  // History prevalence among insulin-treated / untreated diabetics. The rate
  // among non-diabetics is whatever restores the overall History prevalence.
  std::map<std::string, double> treated = {{"N18", 0.516}, {"N17", 0.401}, {"I50", 0.618}};
  std::map<std::string, double> untreated = {{"N18", 0.229}, {"N17", 0.145}, {"I50", 0.357}};
  // Glucose_H at Last: insulin-treated, untreated diabetic, untreated other.
  double glucose_last_treated = 0.193;
  double glucose_last_untreated_diabetic = 0.139;
  double glucose_last_untreated_other = 0.081;
};

struct SynthConfig {
  std::size_t n_patients = 2723;
  double case_fraction = 383.0 / 2723.0;
  std::uint64_t seed = 42;

  std::map<std::string, double> history_prevalence = {
      {"I10", 0.790},        {"E11", 0.455},          {"N18", 0.335},
      {"N17", 0.257},        {"I50", 0.419},          {"Glucose_H", 0.639},
      {"Creatinine_H", 0.328}, {"E66", 0.350},        {"Troponin_H", 0.080},
      {"Lisinopril", 0.332}, {"Metoprolol", 0.300},   {"Atorvastatin", 0.400},
      {"LoopDiuretic", 0.200},
  };

  // Applied History -> Past and History -> Last.
  std::map<std::string, PersistenceParams> persistence = {
      {"E11", {0.673, 0.050}},        {"I10", {0.520, 0.091}},
      {"N18", {0.379, 0.030}},        {"I50", {0.250, 0.015}},
      {"E66", {0.250, 0.015}},        {"Glucose_H", {0.350, 0.080}},
      {"Creatinine_H", {0.120, 0.010}}, {"Troponin_H", {0.040, 0.003}},
      {"N17", {0.080, 0.020}},        {"Lisinopril", {0.700, 0.050}},
      {"Insulin", {0.800, 0.030}},    {"Metoprolol", {0.700, 0.050}},
      {"Atorvastatin", {0.750, 0.050}}, {"LoopDiuretic", {0.600, 0.040}},
  };

  // Fraction of patients with any post-index encounter; chronic diagnoses
  // can only be coded at Last for them.
  double follow_up_rate = 0.70;
  // Selection score added for followed-up patients when filling the
  // calibrated Last-period strata (AKI, glucose).
  double follow_up_weight = 2.0;

  CascadeParams cascade;
  ConfoundingParams confounding;

  // Selection scores for History columns: target code -> (source code -> weight).
  // Sources must be sampled before the target (see kHistoryOrder).
  std::map<std::string, std::map<std::string, double>> history_associations = {
      {"N17", {{"N18", 2.0}}},
      {"I50", {{"N18", 0.5}}},
      {"I10", {{"E11", 2.0}, {"N18", 1.5}, {"I50", 1.0}}},
      {"E66", {{"E11", 1.0}}},
      {"Glucose_H", {{"E11", 2.5}}},
      {"Creatinine_H", {{"N18", 2.5}}},
      {"Troponin_H", {{"I50", 1.5}}},
      {"Lisinopril", {{"I10", 0.5}}},
      {"Metoprolol", {{"I50", 1.0}, {"I10", 0.5}}},
      {"Atorvastatin", {{"E11", 1.0}}},
      {"LoopDiuretic", {{"I50", 1.5}}},
  };

  // Selection scores for the outcome, keyed "<code>__<period>".
  std::map<std::string, double> outcome_weights = {
      {"I50__history", 1.5},    {"I50__last", 1.5},     {"E11__last", 1.0},
      {"N18__last", 1.0},       {"Troponin_H__last", 2.0}, {"Creatinine_H__last", 1.0},
      {"E66__history", 0.5},
  };

  // Calibration tolerances.
  double tolerance_abs = 0.02;
  double tolerance_rel = 0.10;
};

// Order in which History columns are sampled (association sources must come
// earlier). Catalog features not listed follow in catalog order.
inline const std::vector<std::string> kHistoryOrder = {
    "E11", "Insulin", "N18", "N17", "I50", "I10", "E66", "Glucose_H",
    "Creatinine_H", "Troponin_H", "Lisinopril", "Metoprolol", "Atorvastatin",
    "LoopDiuretic"};

namespace detail {

inline void check_probability(double p, const std::string& name) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ValidationError("probability out of [0,1]: " + name, name);
  }
}

}  // namespace detail

inline void validate(const SynthConfig& c) {
  using detail::check_probability;
  check_probability(c.case_fraction, "case_fraction");
  check_probability(c.follow_up_rate, "follow_up_rate");
  if (c.follow_up_rate == 0) throw ValidationError("follow_up_rate must be > 0", "follow_up_rate");
  for (const auto& [k, v] : c.history_prevalence) check_probability(v, "history_prevalence." + k);
  for (const auto& [k, v] : c.persistence) {
    check_probability(v.p_given_present, "persistence." + k + ".p_given_present");
    check_probability(v.p_given_absent, "persistence." + k + ".p_given_absent");
  }
  const auto& cs = c.cascade;
  if (!(cs.rr_ckd_to_aki > 0)) throw ValidationError("rr must be > 0", "cascade.rr_ckd_to_aki");
  if (!(cs.rr_aki_to_hf > 0)) throw ValidationError("rr must be > 0", "cascade.rr_aki_to_hf");
  if (!(cs.lisinopril_aki_multiplier > 0)) {
    throw ValidationError("multiplier must be > 0", "cascade.lisinopril_aki_multiplier");
  }
  check_probability(cs.p_aki_given_no_ckd, "cascade.p_aki_given_no_ckd");
  check_probability(cs.p_hf_given_no_aki, "cascade.p_hf_given_no_aki");
  check_probability(cs.p_aki_given_prior_aki, "cascade.p_aki_given_prior_aki");
  check_probability(cs.p_aki_given_no_ckd * cs.rr_ckd_to_aki, "cascade.rr_ckd_to_aki");
  check_probability(cs.p_hf_given_no_aki * cs.rr_aki_to_hf, "cascade.rr_aki_to_hf");
  const auto& cf = c.confounding;
  check_probability(cf.insulin_rate_diabetic, "confounding.insulin_rate_diabetic");
  check_probability(cf.insulin_rate_other, "confounding.insulin_rate_other");
  for (const auto& [k, v] : cf.treated) check_probability(v, "confounding.treated." + k);
  for (const auto& [k, v] : cf.untreated) check_probability(v, "confounding.untreated." + k);
  check_probability(cf.glucose_last_treated, "confounding.glucose_last_treated");
  check_probability(cf.glucose_last_untreated_diabetic, "confounding.glucose_last_untreated_diabetic");
  check_probability(cf.glucose_last_untreated_other, "confounding.glucose_last_untreated_other");
}

// ---------------------------------------------------------------------------
// JSON config: every field optional; omitted fields keep defaults.

inline SynthConfig synth_config_from_json(const nlohmann::json& j,
                                          SynthConfig c = SynthConfig{}) {
  if (!j.is_object()) throw ValidationError("synth config must be a JSON object");
  auto num = [](const nlohmann::json& v, const std::string& name) {
    if (!v.is_number()) throw ValidationError("expected number: " + name, name);
    return v.get<double>();
  };
  try {
    if (j.contains("n_patients")) {
      auto v = j.at("n_patients");
      if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw ValidationError("n_patients must be a non-negative integer", "n_patients");
      }
      c.n_patients = v.get<std::size_t>();
    }
    if (j.contains("case_fraction")) c.case_fraction = num(j["case_fraction"], "case_fraction");
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("follow_up_rate")) c.follow_up_rate = num(j["follow_up_rate"], "follow_up_rate");
    if (j.contains("follow_up_weight")) c.follow_up_weight = num(j["follow_up_weight"], "follow_up_weight");
    if (j.contains("history_prevalence")) {
      for (const auto& [k, v] : j.at("history_prevalence").items()) {
        c.history_prevalence[k] = num(v, "history_prevalence." + k);
      }
    }
    if (j.contains("persistence")) {
      for (const auto& [k, v] : j.at("persistence").items()) {
        auto& p = c.persistence[k];
        if (v.contains("p_given_present")) p.p_given_present = num(v["p_given_present"], "persistence." + k + ".p_given_present");
        if (v.contains("p_given_absent")) p.p_given_absent = num(v["p_given_absent"], "persistence." + k + ".p_given_absent");
      }
    }
    if (j.contains("cascade")) {
      const auto& v = j.at("cascade");
      auto& cs = c.cascade;
      if (v.contains("rr_ckd_to_aki")) cs.rr_ckd_to_aki = num(v["rr_ckd_to_aki"], "cascade.rr_ckd_to_aki");
      if (v.contains("rr_aki_to_hf")) cs.rr_aki_to_hf = num(v["rr_aki_to_hf"], "cascade.rr_aki_to_hf");
      if (v.contains("p_aki_given_no_ckd")) cs.p_aki_given_no_ckd = num(v["p_aki_given_no_ckd"], "cascade.p_aki_given_no_ckd");
      if (v.contains("p_hf_given_no_aki")) cs.p_hf_given_no_aki = num(v["p_hf_given_no_aki"], "cascade.p_hf_given_no_aki");
      if (v.contains("p_aki_given_prior_aki")) cs.p_aki_given_prior_aki = num(v["p_aki_given_prior_aki"], "cascade.p_aki_given_prior_aki");
      if (v.contains("lisinopril_aki_multiplier")) cs.lisinopril_aki_multiplier = num(v["lisinopril_aki_multiplier"], "cascade.lisinopril_aki_multiplier");
    }
    if (j.contains("confounding")) {
      const auto& v = j.at("confounding");
      auto& cf = c.confounding;
      if (v.contains("insulin_rate_diabetic")) cf.insulin_rate_diabetic = num(v["insulin_rate_diabetic"], "confounding.insulin_rate_diabetic");
      if (v.contains("insulin_rate_other")) cf.insulin_rate_other = num(v["insulin_rate_other"], "confounding.insulin_rate_other");
      if (v.contains("treated")) {
        for (const auto& [k, x] : v.at("treated").items()) cf.treated[k] = num(x, "confounding.treated." + k);
      }
      if (v.contains("untreated")) {
        for (const auto& [k, x] : v.at("untreated").items()) cf.untreated[k] = num(x, "confounding.untreated." + k);
      }
      if (v.contains("glucose_last_treated")) cf.glucose_last_treated = num(v["glucose_last_treated"], "confounding.glucose_last_treated");
      if (v.contains("glucose_last_untreated_diabetic")) cf.glucose_last_untreated_diabetic = num(v["glucose_last_untreated_diabetic"], "confounding.glucose_last_untreated_diabetic");
      if (v.contains("glucose_last_untreated_other")) cf.glucose_last_untreated_other = num(v["glucose_last_untreated_other"], "confounding.glucose_last_untreated_other");
    }
    if (j.contains("history_associations")) {
      for (const auto& [target, sources] : j.at("history_associations").items()) {
        auto& m = c.history_associations[target];
        m.clear();
        for (const auto& [src, w] : sources.items()) m[src] = num(w, "history_associations." + target + "." + src);
      }
    }
    if (j.contains("outcome_weights")) {
      c.outcome_weights.clear();
      for (const auto& [k, w] : j.at("outcome_weights").items()) c.outcome_weights[k] = num(w, "outcome_weights." + k);
    }
    if (j.contains("tolerance_abs")) c.tolerance_abs = num(j["tolerance_abs"], "tolerance_abs");
    if (j.contains("tolerance_rel")) c.tolerance_rel = num(j["tolerance_rel"], "tolerance_rel");
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid synth config: ") + e.what());
  }
  validate(c);
  return c;
}

inline nlohmann::json to_json(const SynthConfig& c) {
  nlohmann::json j;
  j["n_patients"] = c.n_patients;
  j["case_fraction"] = c.case_fraction;
  j["seed"] = c.seed;
  j["follow_up_rate"] = c.follow_up_rate;
  j["follow_up_weight"] = c.follow_up_weight;
  j["history_prevalence"] = c.history_prevalence;
  for (const auto& [k, v] : c.persistence) {
    j["persistence"][k] = {{"p_given_present", v.p_given_present}, {"p_given_absent", v.p_given_absent}};
  }
  const auto& cs = c.cascade;
  j["cascade"] = {{"rr_ckd_to_aki", cs.rr_ckd_to_aki},
                  {"rr_aki_to_hf", cs.rr_aki_to_hf},
                  {"p_aki_given_no_ckd", cs.p_aki_given_no_ckd},
                  {"p_hf_given_no_aki", cs.p_hf_given_no_aki},
                  {"p_aki_given_prior_aki", cs.p_aki_given_prior_aki},
                  {"lisinopril_aki_multiplier", cs.lisinopril_aki_multiplier}};
  const auto& cf = c.confounding;
  j["confounding"] = {{"insulin_rate_diabetic", cf.insulin_rate_diabetic},
                      {"insulin_rate_other", cf.insulin_rate_other},
                      {"treated", cf.treated},
                      {"untreated", cf.untreated},
                      {"glucose_last_treated", cf.glucose_last_treated},
                      {"glucose_last_untreated_diabetic", cf.glucose_last_untreated_diabetic},
                      {"glucose_last_untreated_other", cf.glucose_last_untreated_other}};
  j["history_associations"] = c.history_associations;
  j["outcome_weights"] = c.outcome_weights;
  j["tolerance_abs"] = c.tolerance_abs;
  j["tolerance_rel"] = c.tolerance_rel;
  return j;
}

// ---------------------------------------------------------------------------

namespace detail {

// Stream tags, one per sampling step.
enum Step : std::uint64_t {
  kStepHistory = 1,
  kStepPast = 2,
  kStepLast = 3,
  kStepFollowUp = 4,
  kStepOutcome = 5,
};

class QuotaSampler {
 public:
  QuotaSampler(const CounterRng& rng, std::size_t n) : rng_(rng), n_(n) {}

  // Marks exactly round(rate * |members|) members, preferring high scores.
  template <class Score, class Mark>
  void select(const std::vector<std::size_t>& members, double rate,
              std::uint64_t step, std::uint64_t feature, Score&& score,
              Mark&& mark, const std::string& param) const {
    check_probability(rate, param);
    auto k = static_cast<std::size_t>(std::llround(rate * static_cast<double>(members.size())));
    select_count(members, k, step, feature, score, mark);
  }

  template <class Score, class Mark>
  void select_count(const std::vector<std::size_t>& members, std::size_t k,
                    std::uint64_t step, std::uint64_t feature, Score&& score,
                    Mark&& mark) const {
    if (k == 0 || members.empty()) return;
    k = std::min(k, members.size());
    std::vector<std::pair<double, std::size_t>> keyed;
    keyed.reserve(members.size());
    for (auto p : members) keyed.emplace_back(rng_.gumbel(step, p, feature) + score(p), p);
    auto cmp = [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    };
    std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(k), keyed.end(), cmp);
    for (std::size_t i = 0; i < k; ++i) mark(keyed[i].second);
  }

 private:
  const CounterRng& rng_;
  std::size_t n_;
};

}  // namespace detail

inline Cohort generate(const SynthConfig& config,
                       std::shared_ptr<const FeatureCatalog> catalog) {
  validate(config);
  const auto& cat = *catalog;
  const std::size_t n = config.n_patients;
  const std::size_t d = cat.size();
  const CounterRng rng(config.seed);
  const detail::QuotaSampler sampler(rng, n);

  std::vector<TemporalFeatureVector> tau(n, TemporalFeatureVector(d));
  std::vector<std::uint8_t> outcome(n, 0);
  std::vector<std::size_t> everyone(n);
  std::iota(everyone.begin(), everyone.end(), std::size_t{0});

  auto need = [&](const char* code) { return cat.index_of(code); };
  const auto E11 = need("E11"), N18 = need("N18"), N17 = need("N17"),
             GLU = need("Glucose_H"), INS = need("Insulin"), LIS = need("Lisinopril");

  auto bit = [&](std::size_t p, FeatureIndex f, Period t) { return tau[p].get(f, t); };
  auto marker = [&](FeatureIndex f, Period t) {
    return [&tau, f, t](std::size_t p) { tau[p].set(f, t, true); };
  };
  auto filter = [&](const std::vector<std::size_t>& from, auto pred) {
    std::vector<std::size_t> out;
    for (auto p : from) {
      if (pred(p)) out.push_back(p);
    }
    return out;
  };
  auto zero = [](std::size_t) { return 0.0; };

  // ---- History -----------------------------------------------------------
  std::vector<FeatureIndex> order;
  std::vector<std::uint8_t> sampled(d, 0);
  for (const auto& code : kHistoryOrder) {
    if (auto f = cat.find(code)) order.push_back(*f);
  }
  for (FeatureIndex f = 0; f < d; ++f) {
    if (std::find(order.begin(), order.end(), f) == order.end()) order.push_back(f);
  }

  auto history_score = [&](FeatureIndex target) {
    std::vector<std::pair<FeatureIndex, double>> terms;
    auto it = config.history_associations.find(cat.code(target));
    if (it != config.history_associations.end()) {
      for (const auto& [src, w] : it->second) {
        auto s = cat.find(src);
        if (!s) throw ValidationError("association references unknown code: " + src, src);
        if (!sampled[*s]) {
          throw ValidationError("association source sampled after target: " + src + " -> " + cat.code(target), src);
        }
        terms.emplace_back(*s, w);
      }
    }
    return [&, terms](std::size_t p) {
      double s = 0;
      for (const auto& [src, w] : terms) s += w * bit(p, src, Period::History);
      return s;
    };
  };

  std::vector<std::size_t> diab_treated, diab_untreated, non_diabetic;
  for (auto f : order) {
    const auto& code = cat.code(f);
    auto mark = marker(f, Period::History);
    if (f == INS) {
      auto diab = filter(everyone, [&](std::size_t p) { return bit(p, E11, Period::History); });
      auto other = filter(everyone, [&](std::size_t p) { return !bit(p, E11, Period::History); });
      sampler.select(diab, config.confounding.insulin_rate_diabetic, detail::kStepHistory, f, zero, mark, "confounding.insulin_rate_diabetic");
      sampler.select(other, config.confounding.insulin_rate_other, detail::kStepHistory, f, zero, mark, "confounding.insulin_rate_other");
      diab_treated = filter(diab, [&](std::size_t p) { return bit(p, INS, Period::History); });
      diab_untreated = filter(diab, [&](std::size_t p) { return !bit(p, INS, Period::History); });
      non_diabetic = other;
      sampled[f] = 1;
      continue;
    }
    auto prev_it = config.history_prevalence.find(code);
    double rate = prev_it == config.history_prevalence.end() ? 0.0 : prev_it->second;
    auto score = history_score(f);
    auto tr = config.confounding.treated.find(code);
    auto un = config.confounding.untreated.find(code);
    if (tr != config.confounding.treated.end() && un != config.confounding.untreated.end() && sampled[E11] && sampled[INS]) {
      // Stratified by diabetes/insulin; the non-diabetic quota restores the
      // overall prevalence.
      auto total = static_cast<long long>(std::llround(rate * static_cast<double>(n)));
      auto k_t = static_cast<long long>(std::llround(tr->second * static_cast<double>(diab_treated.size())));
      auto k_u = static_cast<long long>(std::llround(un->second * static_cast<double>(diab_untreated.size())));
      auto k_o = total - k_t - k_u;
      if (k_o < 0 || k_o > static_cast<long long>(non_diabetic.size())) {
        throw ValidationError("confounding rates incompatible with history prevalence of " + code,
                              "confounding.treated." + code);
      }
      sampler.select_count(diab_treated, static_cast<std::size_t>(k_t), detail::kStepHistory, f, score, mark);
      sampler.select_count(diab_untreated, static_cast<std::size_t>(k_u), detail::kStepHistory, f, score, mark);
      sampler.select_count(non_diabetic, static_cast<std::size_t>(k_o), detail::kStepHistory, f, score, mark);
    } else {
      sampler.select(everyone, rate, detail::kStepHistory, f, score, mark, "history_prevalence." + code);
    }
    sampled[f] = 1;
  }

  // ---- Past: persistence from History -------------------------------------
  auto persist = [&](FeatureIndex f, Period t, const std::vector<std::size_t>& pool,
                     double scale, std::uint64_t step) {
    auto it = config.persistence.find(cat.code(f));
    if (it == config.persistence.end()) return;
    auto present = filter(pool, [&](std::size_t p) { return bit(p, f, Period::History); });
    auto absent = filter(pool, [&](std::size_t p) { return !bit(p, f, Period::History); });
    const auto& code = cat.code(f);
    sampler.select(present, it->second.p_given_present / scale, step, f, zero, marker(f, t),
                   "persistence." + code + ".p_given_present");
    sampler.select(absent, it->second.p_given_absent / scale, step, f, zero, marker(f, t),
                   "persistence." + code + ".p_given_absent");
  };
  for (FeatureIndex f = 0; f < d; ++f) persist(f, Period::Past, everyone, 1.0, detail::kStepPast);

  // ---- Last ---------------------------------------------------------------
  std::vector<std::uint8_t> followed(n, 0);
  sampler.select(everyone, config.follow_up_rate, detail::kStepFollowUp, 0, zero,
                 [&](std::size_t p) { followed[p] = 1; }, "follow_up_rate");
  auto followed_up = filter(everyone, [&](std::size_t p) { return followed[p] != 0; });

  const auto& cs = config.cascade;
  const auto& cf = config.confounding;
  auto encounter = [&](std::size_t p) { return followed[p] ? config.follow_up_weight : 0.0; };
  for (FeatureIndex f = 0; f < d; ++f) {
    if (f == N17) {
      double m = cs.lisinopril_aki_multiplier;
      auto stratum = [&](auto pred, double rate, const std::string& param) {
        for (bool lis : {false, true}) {
          auto members = filter(everyone, [&](std::size_t p) {
            return pred(p) && bit(p, LIS, Period::History) == lis;
          });
          sampler.select(members, lis ? rate * m : rate, detail::kStepLast, f, encounter,
                         marker(f, Period::Last), param);
        }
      };
      stratum([&](std::size_t p) { return bit(p, N17, Period::History); },
              cs.p_aki_given_prior_aki, "cascade.p_aki_given_prior_aki");
      stratum([&](std::size_t p) { return !bit(p, N17, Period::History) && bit(p, N18, Period::History); },
              cs.p_aki_given_no_ckd * cs.rr_ckd_to_aki, "cascade.rr_ckd_to_aki");
      stratum([&](std::size_t p) { return !bit(p, N17, Period::History) && !bit(p, N18, Period::History); },
              cs.p_aki_given_no_ckd, "cascade.p_aki_given_no_ckd");
    } else if (f == GLU) {
      auto treated = filter(everyone, [&](std::size_t p) { return bit(p, INS, Period::History); });
      auto untreated_diab = filter(everyone, [&](std::size_t p) {
        return !bit(p, INS, Period::History) && bit(p, E11, Period::History);
      });
      auto untreated_other = filter(everyone, [&](std::size_t p) {
        return !bit(p, INS, Period::History) && !bit(p, E11, Period::History);
      });
      // Treated diabetics and treated non-diabetics are separate quotas so the
      // diabetic rate is exact.
      auto treated_diab = filter(treated, [&](std::size_t p) { return bit(p, E11, Period::History); });
      auto treated_other = filter(treated, [&](std::size_t p) { return !bit(p, E11, Period::History); });
      sampler.select(treated_diab, cf.glucose_last_treated, detail::kStepLast, f, encounter, marker(f, Period::Last), "confounding.glucose_last_treated");
      sampler.select(treated_other, cf.glucose_last_treated, detail::kStepLast, f, encounter, marker(f, Period::Last), "confounding.glucose_last_treated");
      sampler.select(untreated_diab, cf.glucose_last_untreated_diabetic, detail::kStepLast, f, encounter, marker(f, Period::Last), "confounding.glucose_last_untreated_diabetic");
      sampler.select(untreated_other, cf.glucose_last_untreated_other, detail::kStepLast, f, encounter, marker(f, Period::Last), "confounding.glucose_last_untreated_other");
    } else if (cat.is(f, TaxonomyClass::Immutable) || cat.is(f, TaxonomyClass::Controllable)) {
      persist(f, Period::Last, followed_up, config.follow_up_rate, detail::kStepLast);
    } else {
      persist(f, Period::Last, everyone, 1.0, detail::kStepLast);
    }
  }

  // ---- Outcome: stratified by AKI at Last ---------------------------------
  std::vector<std::tuple<FeatureIndex, Period, double>> terms;
  for (const auto& [key, w] : config.outcome_weights) {
    auto sep = key.rfind("__");
    auto t = sep == std::string::npos ? std::nullopt : parse_period(std::string_view(key).substr(sep + 2));
    if (!t) throw ValidationError("outcome weight key needs <code>__<period>: " + key, key);
    terms.emplace_back(cat.index_of(key.substr(0, sep)), *t, w);
  }
  auto outcome_score = [&](std::size_t p) {
    double s = 0;
    for (const auto& [f, t, w] : terms) s += w * bit(p, f, t);
    return s;
  };
  auto aki = filter(everyone, [&](std::size_t p) { return bit(p, N17, Period::Last); });
  auto no_aki = filter(everyone, [&](std::size_t p) { return !bit(p, N17, Period::Last); });
  auto mark_case = [&](std::size_t p) { outcome[p] = 1; };
  // The case count is exact; the base rate is whatever splits it across the
  // AKI strata at the configured relative risk.
  const auto cases = static_cast<std::size_t>(std::llround(config.case_fraction * static_cast<double>(n)));
  const double weight = cs.rr_aki_to_hf * static_cast<double>(aki.size()) + static_cast<double>(no_aki.size());
  const double base = weight > 0 ? static_cast<double>(cases) / weight : 0.0;
  auto k_aki = std::min<std::size_t>(
      aki.size(), static_cast<std::size_t>(std::llround(base * cs.rr_aki_to_hf * static_cast<double>(aki.size()))));
  auto k_rest = std::min(no_aki.size(), cases - std::min(cases, k_aki));
  sampler.select_count(aki, k_aki, detail::kStepOutcome, 0, outcome_score, mark_case);
  sampler.select_count(no_aki, k_rest, detail::kStepOutcome, 0, outcome_score, mark_case);

  std::vector<Patient> patients(n);
  const std::size_t width = std::max<std::size_t>(5, std::to_string(n).size());
  for (std::size_t p = 0; p < n; ++p) {
    auto num = std::to_string(p + 1);
    patients[p].patient_id = "P" + std::string(width - num.size(), '0') + num;
    patients[p].features = std::move(tau[p]);
    patients[p].outcome = outcome[p] != 0;
  }
  return Cohort(std::move(catalog), std::move(patients));
}

// ---------------------------------------------------------------------------
// Calibration report

struct CalibrationCheck {
  std::string name;
  double target = 0;
  double observed = 0;  // NaN when the statistic is undefined (empty stratum)
  double tolerance = 0;
  bool relative = false;
  bool pass = false;
};

struct CalibrationReport {
  std::vector<CalibrationCheck> checks;
  bool pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.pass; });
  }
};

inline nlohmann::json to_json(const CalibrationReport& r) {
  nlohmann::json j;
  j["pass"] = r.pass();
  j["checks"] = nlohmann::json::array();
  for (const auto& c : r.checks) {
    nlohmann::json e = {{"name", c.name},
                        {"target", c.target},
                        {"tolerance", c.tolerance},
                        {"kind", c.relative ? "relative" : "absolute"},
                        {"pass", c.pass}};
    e["observed"] = std::isfinite(c.observed) ? nlohmann::json(c.observed) : nlohmann::json(nullptr);
    j["checks"].push_back(std::move(e));
  }
  return j;
}

// Recomputes every targeted statistic from the cohort bits by direct
// counting and compares against the configuration.
inline CalibrationReport validate_calibration(const Cohort& cohort, const SynthConfig& config) {
  CalibrationReport report;
  const auto& cat = cohort.catalog();
  const double nan = std::numeric_limits<double>::quiet_NaN();

  auto add = [&](std::string name, double target, double observed, bool relative) {
    double tol = relative ? config.tolerance_rel : config.tolerance_abs;
    bool ok = std::isfinite(observed) &&
              (relative ? std::abs(observed - target) <= tol * std::abs(target)
                        : std::abs(observed - target) <= tol);
    report.checks.push_back({std::move(name), target, observed, tol, relative, ok});
  };
  // P(outcome_bit | condition) by counting; NaN for an empty stratum.
  auto rate = [&](auto cond, auto event) {
    std::size_t m = 0, k = 0;
    for (const auto& p : cohort.patients()) {
      if (cond(p)) {
        ++m;
        k += event(p) ? 1 : 0;
      }
    }
    return m == 0 ? nan : static_cast<double>(k) / static_cast<double>(m);
  };
  auto has = [](FeatureIndex f, Period t) {
    return [f, t](const Patient& p) { return p.features.get(f, t); };
  };
  auto lacks = [](FeatureIndex f, Period t) {
    return [f, t](const Patient& p) { return !p.features.get(f, t); };
  };
  auto all = [](const Patient&) { return true; };
  auto is_case = [](const Patient& p) { return p.outcome; };

  add("case_fraction", config.case_fraction, rate(all, is_case), false);
  for (const auto& [code, target] : config.history_prevalence) {
    auto f = cat.find(code);
    if (!f) continue;
    add("history_prevalence." + code, target, rate(all, has(*f, Period::History)), false);
  }
  for (const auto& [code, pp] : config.persistence) {
    auto f = cat.find(code);
    if (!f || !cat.is(*f, TaxonomyClass::Immutable)) continue;
    double p1 = rate(has(*f, Period::History), has(*f, Period::Last));
    double p0 = rate(lacks(*f, Period::History), has(*f, Period::Last));
    add("persistence_ratio." + code, pp.p_given_present / pp.p_given_absent, p1 / p0, true);
  }

  auto E11 = cat.find("E11"), N18 = cat.find("N18"), N17 = cat.find("N17"),
       INS = cat.find("Insulin"), GLU = cat.find("Glucose_H");
  if (N18 && N17) {
    auto no_prior = lacks(*N17, Period::History);
    auto ckd = [&](const Patient& p) { return no_prior(p) && p.features.get(*N18, Period::History); };
    auto no_ckd = [&](const Patient& p) { return no_prior(p) && !p.features.get(*N18, Period::History); };
    double p1 = rate(ckd, has(*N17, Period::Last));
    double p0 = rate(no_ckd, has(*N17, Period::Last));
    const auto& cs = config.cascade;
    add("cascade.rr_ckd_to_aki", cs.rr_ckd_to_aki, p1 / p0, true);
    double h1 = rate(has(*N17, Period::Last), is_case);
    double h0 = rate(lacks(*N17, Period::Last), is_case);
    add("cascade.rr_aki_to_hf", cs.rr_aki_to_hf, h1 / h0, true);
    add("cascade.p_hf_given_no_aki", cs.p_hf_given_no_aki, h0, false);
  }
  if (E11 && INS) {
    auto treated = [&](const Patient& p) { return p.features.get(*E11, Period::History) && p.features.get(*INS, Period::History); };
    auto untreated = [&](const Patient& p) { return p.features.get(*E11, Period::History) && !p.features.get(*INS, Period::History); };
    for (const auto& [code, target] : config.confounding.treated) {
      if (auto f = cat.find(code)) add("confounding.treated." + code, target, rate(treated, has(*f, Period::History)), false);
    }
    for (const auto& [code, target] : config.confounding.untreated) {
      if (auto f = cat.find(code)) add("confounding.untreated." + code, target, rate(untreated, has(*f, Period::History)), false);
    }
    if (GLU) {
      add("confounding.glucose_last_treated", config.confounding.glucose_last_treated, rate(treated, has(*GLU, Period::Last)), false);
      add("confounding.glucose_last_untreated_diabetic", config.confounding.glucose_last_untreated_diabetic, rate(untreated, has(*GLU, Period::Last)), false);
    }
  }
  return report;
}

}  // namespace seqcf
