// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "seqcf/cascade.hpp"
#include "seqcf/naivecf.hpp"
#include "seqcf/seqcf.hpp"
#include "support.hpp"

using namespace seqcf;
using namespace seqcf::test;

namespace {

struct Line {
  std::string detail;
  bool pass = true;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [miss]");
  }
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

bool within(double x, double target, double tol) { return std::abs(x - target) <= tol; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Line calibration() {
  Line l;
  auto t0 = std::chrono::steady_clock::now();
  auto c = generate(SynthConfig{}, default_cat());
  double secs = seconds_since(t0);
  const std::pair<const char*, double> targets[] = {{"I10", 0.790}, {"E11", 0.455},       {"N18", 0.335},
                                                    {"N17", 0.257}, {"I50", 0.419},       {"Glucose_H", 0.639},
                                                    {"Creatinine_H", 0.328}};
  for (const auto& [code, target] : targets) {
    double p = prevalence(c, c.catalog().index_of(code), Period::History);
    l.check(within(p, target, 0.02), std::string(code) + fmt(" %.1f%%", 100 * p));
  }
  l.check(secs < 10.0, fmt("generated in %.2f s", secs));
  return l;
}

Line persistence() {
  Line l;
  const auto& c = calibrated().cohort;
  for (auto [code, target] : {std::pair{"E11", 13.5}, {"I10", 5.7}, {"N18", 12.6}}) {
    double r = persistence_stats(c, c.catalog().index_of(code)).ratio;
    l.check(std::abs(r / target - 1.0) <= 0.10, std::string(code) + fmt(" %.2fx", r));
  }
  return l;
}

Line audit() {
  Line l;
  const auto& c = calibrated().cohort;
  const auto& cat = c.catalog();
  auto r = audit_naive(c);
  for (auto [code, target] : {std::pair{"I10", 0.956}, {"E11", 0.960}, {"N18", 0.876}}) {
    auto rate = r.feature_p1.at(cat.index_of(code)).rate().value_or(-1);
    l.check(within(rate, target, 0.03), std::string("P1 ") + code + fmt(" %.1f%%", 100 * rate));
  }
  for (auto [code, target] : {std::pair{"Glucose_H", 0.607}, {"N17", 0.668}}) {
    auto rate = r.feature_p2.at(cat.index_of(code)).rate().value_or(-1);
    l.check(within(rate, target, 0.05), std::string("P2 ") + code + fmt(" %.1f%%", 100 * rate));
  }
  auto any = r.any.rate().value_or(-1);
  l.check(within(any, 0.573, 0.04), fmt("any %.1f%%", 100 * any));
  return l;
}

Line cascade() {
  Line l;
  auto steps = cascade_report(calibrated().cohort);
  const auto& a = steps[0];
  const auto& b = steps[1];
  l.check(a.relative_risk >= 2.0 && a.relative_risk <= 2.6, fmt("CKD->AKI RR %.2f", a.relative_risk));
  l.check(b.relative_risk >= 1.05 && b.relative_risk <= 1.35, fmt("AKI->HF RR %.2f", b.relative_risk));
  l.check(within(a.p_exposed, 0.068, 0.015) && within(a.p_unexposed, 0.030, 0.015),
          fmt("AKI %.3f/%.3f", a.p_exposed, a.p_unexposed));
  l.check(within(b.p_exposed, 0.164, 0.015) && within(b.p_unexposed, 0.138, 0.015),
          fmt("HF %.3f/%.3f", b.p_exposed, b.p_unexposed));
  return l;
}

Line confounding() {
  Line l;
  const auto& c = calibrated().cohort;
  const auto& cat = c.catalog();
  auto prof = insulin_profile(c);
  for (const auto& row : prof.rows) {
    if (row.stratifier == Vertex{cat.index_of("N18"), Period::History}) {
      l.check(within(row.p_treated, 0.516, 0.04) && within(row.p_untreated, 0.229, 0.04),
              fmt("CKD %.1f%%/%.1f%%", 100 * row.p_treated, 100 * row.p_untreated));
    }
    if (row.stratifier == Vertex{cat.index_of("Glucose_H"), Period::Last}) {
      l.check(within(row.p_treated, 0.193, 0.03) && within(row.p_untreated, 0.139, 0.03),
              fmt("glucose %.3f/%.3f", row.p_treated, row.p_untreated));
    }
  }
  return l;
}

Line immutability() {
  Line l;
  const auto& cal = calibrated();
  const auto& cat = cal.cohort.catalog();
  PropagationConfig stoch;
  stoch.mode = PropagationMode::Stochastic;
  stoch.n_samples = 20;
  stoch.seed = 1;
  std::size_t runs = 0, det_fail = 0, sto_fail = 0;
  for (const auto& p : cal.cohort.patients()) {
    for (auto t : kPeriods) {
      for (auto j : cat.of_class(TaxonomyClass::Intervention)) {
        Intervention r{j, t, p.features.get(j, t) ? Action::Remove : Action::Add};
        auto d = propagate(cat, cal.graph, cal.model, p, {r});
        auto s = propagate(cat, cal.graph, cal.model, p, {r}, stoch);
        det_fail += !check_p1(cat, p.features, d.counterfactual).empty();
        sto_fail += !check_p1(cat, p.features, s.counterfactual).empty();
        ++runs;
      }
    }
  }
  l.check(det_fail == 0, std::to_string(runs) + " deterministic, " + std::to_string(det_fail) + " P1 failures");
  l.check(sto_fail == 0, std::to_string(runs) + " stochastic, " + std::to_string(sto_fail) + " P1 failures");
  return l;
}

TemporalFeatureVector from_mask(std::size_t d, std::uint32_t mask) {
  TemporalFeatureVector x(d);
  for (std::size_t k = 0; k < 3 * d; ++k) x.set_flat(k, (mask >> k) & 1U);
  return x;
}

std::uint32_t mask_of(const TemporalFeatureVector& x) {
  std::uint32_t m = 0;
  for (std::size_t k = 0; k < x.flat_size(); ++k) m |= x.flat(k) ? (1U << k) : 0U;
  return m;
}

std::vector<int> indices(std::uint32_t m) {
  std::vector<int> out;
  for (int k = 0; k < 32; ++k) {
    if ((m >> k) & 1U) out.push_back(k);
  }
  return out;
}

std::optional<std::uint32_t> brute_force(const RiskModel& m, std::uint32_t factual, std::size_t d, double theta,
                                         std::size_t max_changes) {
  std::optional<std::uint32_t> best;
  for (std::uint32_t v = 0; v < (1U << (3 * d)); ++v) {
    if (m.score(from_mask(d, v)) >= theta) continue;
    auto dist = static_cast<std::size_t>(std::popcount(v ^ factual));
    if (dist > max_changes) continue;
    if (!best) {
      best = v;
      continue;
    }
    auto bd = static_cast<std::size_t>(std::popcount(*best ^ factual));
    if (dist < bd || (dist == bd && indices(v ^ factual) < indices(*best ^ factual))) best = v;
  }
  return best;
}

Line oracles() {
  Line l;
  std::mt19937 gen(2024);
  std::normal_distribution<double> nw(0.0, 1.5);
  int compared = 0, agree = 0;
  for (int trial = 0; compared < 30 && trial < 1000; ++trial) {
    std::size_t d = 2 + trial % 3;
    std::vector<double> w(3 * d + 1);
    for (auto& x : w) x = nw(gen);
    RiskModel m(d, w);
    std::uniform_int_distribution<std::uint32_t> pick(0, (1U << (3 * d)) - 1);
    auto factual = pick(gen);
    NaiveCfConfig c;
    c.search = NaiveSearch::Exhaustive;
    c.max_changes = 1 + trial % 4;
    c.risk_threshold = 0.2 + 0.05 * (trial % 7);
    auto x = from_mask(d, factual);
    if (m.score(x) < c.risk_threshold) continue;
    auto got = naive_search(m, x, c);
    auto want = brute_force(m, factual, d, c.risk_threshold, c.max_changes);
    ++compared;
    agree += got.has_value() == want.has_value() && (!got || mask_of(*got) == *want);
  }
  l.check(compared >= 20 && agree == compared,
          std::to_string(agree) + "/" + std::to_string(compared) + " toys match full enumeration");

  // f0@h on 4 rows, 3 with f1@l; 1 of the other 4
  Cohort eight(plain_catalog(2), {row("a", "10", "00", "01"), row("b", "10", "00", "01"), row("c", "10", "00", "01"),
                                  row("d", "10", "00", "00"), row("e", "00", "00", "01"), row("f", "00", "00", "00"),
                                  row("g", "00", "00", "00"), row("h", "00", "00", "00")});
  auto rr = relative_risk(eight, {0, Period::History}, Endpoint::bit(1, Period::Last));
  l.check(rr.relative_risk == 3.0 && rr.k_exposed == 3 && rr.k_unexposed == 1, fmt("8-row RR %.2f", rr.relative_risk));
  GraphOptions o;
  o.min_support = 1;
  auto g = estimate_graph(eight, o);
  bool edge = false;
  for (const auto& e : g.edges()) {
    edge |= e.src == Vertex{0, Period::History} && e.dst == Vertex{1, Period::Last} && e.relative_risk == 3.0;
  }
  l.check(edge, "graph edge RR 3.00");

  Cohort six(plain_catalog(1), {row("a", "1", "0", "1"), row("b", "1", "1", "1"), row("c", "1", "0", "0"),
                                row("d", "0", "0", "1"), row("e", "0", "1", "0"), row("f", "0", "0", "0")});
  auto ps = persistence_stats(six, 0);
  l.check(ps.p_given_present == 2.0 / 3.0 && ps.p_given_absent == 1.0 / 3.0 && ps.ratio == 2.0,
          fmt("6-row persistence %.2fx", ps.ratio));
  return l;
}

Cohort toy10() {
  return Cohort(plain_catalog(2), {row("a", "10", "01", "11", true), row("b", "00", "00", "01", false),
                                   row("c", "11", "10", "00", true), row("d", "01", "00", "10", false),
                                   row("e", "10", "11", "01", true), row("f", "00", "01", "00", false),
                                   row("g", "11", "11", "11", true), row("h", "01", "10", "00", false),
                                   row("i", "10", "00", "00", false), row("j", "00", "11", "10", true)});
}

Line numerics() {
  Line l;
  double dev = std::max(finite_difference_gradient_check(toy10(), 1.0), finite_difference_gradient_check(toy10(), 0.0));
  l.check(dev < 1e-6, fmt("gradient deviation %.1e", dev));

  const auto& cal = calibrated();
  auto [tr, te] = split_cohort(cal.cohort, 42);
  double a = auroc(train(tr), te);
  l.check(a >= 0.70, fmt("held-out AUROC %.3f", a) + " (n=" + std::to_string(te.size()) + ")");

  bool synth = save_cohort_csv(generate(SynthConfig{}, default_cat())) == save_cohort_csv(cal.cohort);
  bool model = to_json(train(cal.cohort)).dump() == to_json(cal.model).dump();
  const auto& cat = cal.cohort.catalog();
  PropagationConfig s;
  s.mode = PropagationMode::Stochastic;
  s.n_samples = 200;
  s.seed = 11;
  auto r = make_intervention(cat, "Insulin", Period::History);
  auto p1 = to_json(propagate(cat, cal.graph, cal.model, cal.cohort[5], {r}, s), cat).dump();
  auto p2 = to_json(propagate(cat, cal.graph, cal.model, cal.cohort[5], {r}, s), cat).dump();
  l.check(synth && model && p1 == p2, std::string("reruns identical: synth ") + (synth ? "yes" : "no") +
                                          ", train " + (model ? "yes" : "no") + ", stochastic " +
                                          (p1 == p2 ? "yes" : "no"));
  return l;
}

struct FidelityRun {
  double freq_ratio = 0, rb_ratio = 0;
  std::size_t population = 0, samples = 0;
};

// AKI@last under Lisinopril@history against no intervention, pooled over CKD
// patients not already on it.
FidelityRun fidelity_run(std::size_t n, std::uint64_t seed, std::size_t min_samples) {
  auto cat = default_cat();
  SynthConfig c;
  c.n_patients = n;
  c.seed = seed;
  c.cascade.lisinopril_aki_multiplier = 0.6;
  auto cohort = generate(c, cat);
  auto g = estimate_graph(cohort);
  auto m = train(cohort);
  auto ckd = cat->index_of("N18"), aki = cat->index_of("N17"), lis = cat->index_of("Lisinopril");
  std::vector<const Patient*> pop;
  for (const auto& p : cohort.patients()) {
    if (p.features.get(ckd, Period::History) && !p.features.get(lis, Period::History)) pop.push_back(&p);
  }
  PropagationConfig sc;
  sc.mode = PropagationMode::Stochastic;
  sc.n_samples = std::max<std::size_t>(1, (min_samples + pop.size() - 1) / pop.size());
  sc.seed = 7;
  const auto k = index(Period::Last) * cat->size() + aki;
  double fb = 0, ft = 0, pb = 0, pt = 0;
  Intervention r{lis, Period::History, Action::Add};
  for (const auto* p : pop) {
    auto base = propagate(*cat, g, m, *p, {}, sc);
    auto treated = propagate(*cat, g, m, *p, {r}, sc);
    fb += base.samples->frequency[k];
    ft += treated.samples->frequency[k];
    pb += base.samples->mean_probability[k];
    pt += treated.samples->mean_probability[k];
  }
  return {ft / fb, pt / pb, pop.size(), pop.size() * sc.n_samples};
}

Line fidelity() {
  Line l;
  auto big = fidelity_run(100000, 1, 10000);
  l.check(big.samples >= 10000 && std::abs(big.freq_ratio / 0.6 - 1.0) <= 0.05,
          fmt("n=100000: sampled AKI ratio %.3f (conditional %.3f)", big.freq_ratio, big.rb_ratio) + " over " +
              std::to_string(big.samples) + " samples, " + std::to_string(big.population) + " patients");
  auto small = fidelity_run(2723, 1, 10000);
  l.detail += fmt("; info n=2723: %.3f (conditional %.3f)", small.freq_ratio, small.rb_ratio);
  return l;
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Line()>> criteria[] = {
      {"Calibration", calibration}, {"Persistence", persistence},   {"Violation audit", audit},
      {"Cascade", cascade},         {"Confounding", confounding},   {"Immutability invariant", immutability},
      {"Oracle equivalence", oracles}, {"Numerics", numerics},      {"Propagation fidelity", fidelity},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Line l;
    try {
      l = run();
    } catch (const std::exception& e) {
      l.check(false, std::string("threw: ") + e.what());
    }
    std::printf("%s %s: %s\n", l.pass ? "PASS" : "FAIL", name, l.detail.c_str());
    std::fflush(stdout);
    failed += !l.pass;
  }
  std::printf("%d of %zu criteria failed\n", failed, std::size(criteria));
  return failed == 0 ? 0 : 1;
}
