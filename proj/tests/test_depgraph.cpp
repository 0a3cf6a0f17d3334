#include <gtest/gtest.h>

#include <algorithm>

#include "seqcf/depgraph.hpp"
#include "support.hpp"

using namespace seqcf;
using namespace seqcf::test;

namespace {

const Edge* find_edge(const DependencyGraph& g, Vertex src, Vertex dst) {
  for (const auto& e : g.edges()) {
    if (e.src == src && e.dst == dst) return &e;
  }
  return nullptr;
}

GraphOptions loose() {
  GraphOptions o;
  o.min_support = 1;
  return o;
}

// Edge-only graph over d features, no tables.
DependencyGraph edges_only(std::size_t d, std::vector<std::pair<Vertex, Vertex>> pairs) {
  std::vector<Edge> es;
  for (auto [s, t] : pairs) es.push_back({s, t, 3.0, {}, EdgeSource::Estimated});
  return DependencyGraph(d, {}, es, {});
}

constexpr auto H = Period::History;
constexpr auto S = Period::Past;
constexpr auto L = Period::Last;

}  // namespace

TEST(DepGraph, EightPatientHandCount) {
  // f0@h = 1 for four rows, three of which have f1@l; one of the other four does.
  Cohort c(plain_catalog(2), {row("a", "10", "00", "01"), row("b", "10", "00", "01"), row("c", "10", "00", "01"),
                              row("d", "10", "00", "00"), row("e", "00", "00", "01"), row("f", "00", "00", "00"),
                              row("g", "00", "00", "00"), row("h", "00", "00", "00")});
  auto g = estimate_graph(c, loose());
  const auto* e = find_edge(g, {0, H}, {1, L});
  ASSERT_NE(e, nullptr);
  EXPECT_DOUBLE_EQ(e->relative_risk, 3.0);
  EXPECT_EQ(e->counts.n_src1, 4u);
  EXPECT_EQ(e->counts.n_src1_dst1, 3u);
  EXPECT_EQ(e->counts.n_src0, 4u);
  EXPECT_EQ(e->counts.n_src0_dst1, 1u);
  EXPECT_EQ(e->source, EdgeSource::Estimated);
}

TEST(DepGraph, IndependentFeaturesGetNoEdge) {
  // f1@l is 1 in exactly half of each f0@h stratum.
  std::vector<Patient> ps;
  for (int k = 0; k < 80; ++k) {
    std::string h = k % 2 ? "10" : "00";
    std::string l = (k / 2) % 2 ? "01" : "00";
    ps.push_back(row("p" + std::to_string(k), h, "00", l));
  }
  Cohort c(plain_catalog(2), ps);
  auto g = estimate_graph(c, loose());
  EXPECT_EQ(find_edge(g, {0, H}, {1, L}), nullptr);
}

TEST(DepGraph, CalibratedDiabetesPersistenceEdge) {
  const auto& cal = calibrated();
  auto e11 = cal.cohort.catalog().index_of("E11");
  const auto* e = find_edge(cal.graph, {e11, H}, {e11, L});
  ASSERT_NE(e, nullptr);
  EXPECT_NEAR(e->relative_risk, 13.5, 1.35);
}

TEST(DepGraph, CalibratedCkdToAkiEdge) {
  const auto& cal = calibrated();
  const auto& cat = cal.cohort.catalog();
  EXPECT_NE(find_edge(cal.graph, {cat.index_of("N18"), H}, {cat.index_of("N17"), L}), nullptr);
}

TEST(DepGraph, StructuralProperties) {
  const auto& cal = calibrated();
  const auto& cat = cal.cohort.catalog();
  const auto& g = cal.graph;
  for (const auto& e : g.edges()) {
    EXPECT_LT(e.src.period, e.dst.period);
    if (e.source == EdgeSource::Estimated) {
      EXPECT_GT(e.relative_risk, g.gamma());
      EXPECT_GE(e.counts.n_src1, g.options().min_support);
      EXPECT_GE(e.counts.n_src0, g.options().min_support);
    }
  }
  for (const auto& pw : cat.pathways()) {
    for (auto [t, u] : {std::pair{H, S}, {H, L}, {S, L}}) {
      const auto* e = find_edge(g, {pw.intervention, t}, {pw.target, u});
      ASSERT_NE(e, nullptr);
      EXPECT_EQ(e->source, EdgeSource::Pathway);
    }
  }
  // one table per Past/Last vertex, parents earlier in time and capped
  EXPECT_EQ(g.tables().size(), 2 * cat.size());
  for (const auto& v : g.vertices()) {
    const auto* t = g.table(v);
    if (v.period == H) {
      EXPECT_EQ(t, nullptr);
      continue;
    }
    ASSERT_NE(t, nullptr);
    EXPECT_LE(t->parents().size(), g.options().max_parents + 1);
    Vertex prev{v.feature, static_cast<Period>(index(v.period) - 1)};
    EXPECT_NE(std::find(t->parents().begin(), t->parents().end(), prev), t->parents().end());
    for (const auto& p : t->parents()) EXPECT_LT(p.period, v.period);
  }
}

TEST(DepGraph, HugeGammaLeavesOnlyPathways) {
  GraphOptions o;
  o.gamma = 1e9;
  auto g = estimate_graph(calibrated().cohort, o);
  ASSERT_FALSE(g.edges().empty());
  for (const auto& e : g.edges()) EXPECT_EQ(e.source, EdgeSource::Pathway);
  EXPECT_EQ(g.edges().size(), 3 * default_cat()->pathways().size());
}

TEST(DepGraph, BelowMinSupportNoEstimatedEdges) {
  SynthConfig cfg;
  cfg.n_patients = 30;
  auto g = estimate_graph(generate(cfg, default_cat()));
  for (const auto& e : g.edges()) EXPECT_EQ(e.source, EdgeSource::Pathway);
}

TEST(DepGraph, RejectsBadInput) {
  EXPECT_THROW(estimate_graph(Cohort(plain_catalog(1), {})), ValidationError);
  GraphOptions o;
  o.gamma = 0;
  EXPECT_THROW(estimate_graph(Cohort(plain_catalog(1), {row("a", "1", "0", "0")}), o), ValidationError);
  EXPECT_THROW(edges_only(2, {{{0, L}, {1, S}}}), ValidationError);
  EXPECT_THROW(edges_only(2, {{{0, S}, {1, S}}}), ValidationError);
  EXPECT_THROW(edges_only(2, {{{0, H}, {5, S}}}), ValidationError);
}

TEST(ConditionalTable, LaplaceSmoothing) {
  // parent set in all 8 rows, target in 5
  std::vector<Patient> ps;
  for (int k = 0; k < 8; ++k) ps.push_back(row("p" + std::to_string(k), "10", "00", k < 5 ? "01" : "00"));
  Cohort c(plain_catalog(2), ps);
  auto t = fit_conditional_table(c, {1, L}, {{0, H}}, 1.0);
  EXPECT_DOUBLE_EQ(conditional_probability(t, {true}), 0.6);
  // parent pattern 0 never observed: marginal
  EXPECT_DOUBLE_EQ(conditional_probability(t, {false}), 5.0 / 8.0);
  EXPECT_THROW(conditional_probability(t, {true, false}), ValidationError);
}

TEST(ConditionalTable, ParentsSortedTopologically) {
  Cohort c(plain_catalog(3), {row("a", "100", "010", "001")});
  auto t = fit_conditional_table(c, {2, L}, {{1, S}, {0, H}}, 1.0);
  ASSERT_EQ(t.parents().size(), 2u);
  EXPECT_EQ(t.parents()[0], (Vertex{0, H}));
  EXPECT_EQ(t.pattern_for(c[0].features), 3u);
}

TEST(ConditionalTable, CalibratedAkiGivenCkdWithoutPriorAki) {
  const auto& full = calibrated().cohort;
  const auto& cat = full.catalog();
  auto aki = cat.index_of("N17"), ckd = cat.index_of("N18");
  std::vector<Patient> sub;
  for (const auto& p : full.patients()) {
    if (!p.features.get(aki, H)) sub.push_back(p);
  }
  Cohort c(full.catalog_ptr(), sub);
  auto t = fit_conditional_table(c, {aki, L}, {{ckd, H}}, 1.0);
  EXPECT_NEAR(conditional_probability(t, {true}), 0.068, 0.015);
  EXPECT_NEAR(conditional_probability(t, {false}), 0.030, 0.015);
}

TEST(Ancestors, SingleEdge) {
  auto g = edges_only(2, {{{0, H}, {1, L}}});
  EXPECT_EQ(ancestors_of(g, {1, L}), (std::set<Vertex>{{0, H}}));
  EXPECT_TRUE(ancestors_of(g, {0, H}).empty());
  EXPECT_TRUE(ancestors_of(g, {0, L}).empty());
  EXPECT_THROW(ancestors_of(g, {7, L}), NotFoundError);
}

TEST(Ancestors, ChainClosure) {
  auto g = edges_only(3, {{{0, H}, {1, S}}, {{1, S}, {2, L}}});
  EXPECT_EQ(ancestors_of(g, {2, L}), (std::set<Vertex>{{1, S}, {0, H}}));
  EXPECT_TRUE(g.has_path({0, H}, {2, L}));
  EXPECT_FALSE(g.has_path({2, L}, {0, H}));
  EXPECT_FALSE(g.has_path({0, H}, {0, H}));
}

TEST(Ancestors, AgreesWithHasPathOnCalibratedGraph) {
  const auto& g = calibrated().graph;
  for (const auto& dst : g.vertices()) {
    auto anc = ancestors_of(g, dst);
    for (const auto& src : g.vertices()) {
      EXPECT_EQ(anc.count(src) == 1, g.has_path(src, dst));
    }
  }
}

TEST(DepGraph, JsonRoundTrip) {
  const auto& g = calibrated().graph;
  const auto& cat = *default_cat();
  auto j = to_json(g, cat);
  auto back = graph_from_json(nlohmann::json::parse(j.dump()), cat);
  EXPECT_EQ(to_json(back, cat).dump(), j.dump());
  for (const auto& p : calibrated().cohort.patients()) {
    for (const auto& t : g.tables()) {
      const auto* u = back.table(t.target());
      ASSERT_NE(u, nullptr);
      EXPECT_DOUBLE_EQ(u->probability(u->pattern_for(p.features)), t.probability(t.pattern_for(p.features)));
    }
    break;
  }
  EXPECT_THROW(graph_from_json(nlohmann::json::parse(R"({"gamma":2})"), cat), ValidationError);
}

TEST(DepGraph, PatientOrderDoesNotMatter) {
  const auto& c = calibrated().cohort;
  auto ps = c.patients();
  std::reverse(ps.begin(), ps.end());
  std::rotate(ps.begin(), ps.begin() + 1000, ps.end());
  Cohort shuffled(c.catalog_ptr(), ps);
  EXPECT_EQ(to_json(estimate_graph(shuffled), c.catalog()).dump(), to_json(calibrated().graph, c.catalog()).dump());
}
