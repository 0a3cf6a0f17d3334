#include <gtest/gtest.h>

#include "seqcf/cascade.hpp"
#include "support.hpp"

using namespace seqcf;
using namespace seqcf::test;

namespace {

constexpr auto H = Period::History;
constexpr auto L = Period::Last;

// f0@h exposure, f1@l outcome. Exposed: 4 rows, 3 with outcome. Unexposed:
// 6 rows, 2 with outcome. f2@h marks one unexposed row for exclusion.
Cohort ten() {
  return Cohort(plain_catalog(3), {row("a", "100", "000", "010", true), row("b", "100", "000", "010", true),
                                   row("c", "100", "000", "010", false), row("d", "100", "000", "000", false),
                                   row("e", "000", "000", "010", true), row("f", "001", "000", "010", false),
                                   row("g", "000", "000", "000", false), row("h", "000", "000", "000", false),
                                   row("i", "000", "000", "000", true), row("j", "000", "000", "000", false)});
}

}  // namespace

TEST(RelativeRisk, TenPatientHandTable) {
  auto s = relative_risk(ten(), {0, H}, Endpoint::bit(1, L));
  EXPECT_EQ(s.n_exposed, 4u);
  EXPECT_EQ(s.k_exposed, 3u);
  EXPECT_EQ(s.n_unexposed, 6u);
  EXPECT_EQ(s.k_unexposed, 2u);
  EXPECT_DOUBLE_EQ(s.relative_risk, (3.0 / 4.0) / (2.0 / 6.0));

  // drop row f
  auto e = relative_risk(ten(), {0, H}, Endpoint::bit(1, L), {{2, H}});
  EXPECT_EQ(e.n_unexposed, 5u);
  EXPECT_EQ(e.k_unexposed, 1u);
  EXPECT_DOUBLE_EQ(e.relative_risk, (3.0 / 4.0) / (1.0 / 5.0));

  // outcome label as endpoint: exposed 2/4, unexposed 2/6
  auto y = relative_risk(ten(), {0, H}, Endpoint::outcome());
  EXPECT_DOUBLE_EQ(y.relative_risk, 1.5);
}

TEST(RelativeRisk, SymmetricToyIsOneAndSwapIsReciprocal) {
  // outcome rate 1/2 in both strata
  Cohort c(plain_catalog(2), {row("a", "10", "00", "01"), row("b", "10", "00", "00"), row("c", "00", "00", "01"),
                              row("d", "00", "00", "00")});
  EXPECT_DOUBLE_EQ(relative_risk(c, {0, H}, Endpoint::bit(1, L)).relative_risk, 1.0);

  // flipping the exposure bit on every row inverts the ratio
  auto base = ten();
  std::vector<Patient> flipped;
  for (const auto& p : base.patients()) {
    auto q = p;
    q.features.set(0, H, !p.features.get(0, H));
    flipped.push_back(q);
  }
  Cohort f(plain_catalog(3), flipped);
  double rr = relative_risk(base, {0, H}, Endpoint::bit(1, L)).relative_risk;
  EXPECT_NEAR(relative_risk(f, {0, H}, Endpoint::bit(1, L)).relative_risk, 1.0 / rr, 1e-12);
}

TEST(RelativeRisk, EmptyStrataNamed) {
  Cohort all_exposed(plain_catalog(2), {row("a", "10", "00", "01"), row("b", "10", "00", "00")});
  try {
    relative_risk(all_exposed, {0, H}, Endpoint::bit(1, L));
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("empty stratum"), std::string::npos);
  }
  Cohort no_outcome(plain_catalog(2), {row("a", "10", "00", "01"), row("b", "00", "00", "00")});
  EXPECT_THROW(relative_risk(no_outcome, {0, H}, Endpoint::bit(1, L)), ValidationError);
  EXPECT_THROW(relative_risk(no_outcome, {5, H}, Endpoint::bit(1, L)), NotFoundError);
  EXPECT_THROW(cascade_report(Cohort(default_cat(), {})), ValidationError);
}

TEST(Cascade, CalibratedRelativeRisks) {
  const auto& c = calibrated().cohort;
  auto steps = cascade_report(c);
  ASSERT_EQ(steps.size(), 2u);
  EXPECT_NEAR(steps[0].relative_risk, 2.27, 0.25);
  EXPECT_NEAR(steps[0].p_exposed, 0.068, 0.015);
  EXPECT_NEAR(steps[0].p_unexposed, 0.030, 0.015);
  EXPECT_NEAR(steps[1].relative_risk, 1.19, 0.15);
  EXPECT_NEAR(steps[1].p_exposed, 0.164, 0.015);
  EXPECT_NEAR(steps[1].p_unexposed, 0.138, 0.015);
  ASSERT_EQ(steps[0].excluded.size(), 1u);
  EXPECT_EQ(steps[0].excluded[0], (Vertex{c.catalog().index_of("N17"), H}));
}

TEST(Confounding, CalibratedInsulinProfile) {
  const auto& c = calibrated().cohort;
  const auto& cat = c.catalog();
  auto prof = insulin_profile(c);
  ASSERT_EQ(prof.rows.size(), 4u);
  EXPECT_EQ(prof.rows[0].stratifier, (Vertex{cat.index_of("N18"), H}));
  EXPECT_NEAR(prof.rows[0].p_treated, 0.516, 0.04);
  EXPECT_NEAR(prof.rows[0].p_untreated, 0.229, 0.04);
  EXPECT_EQ(prof.rows[3].stratifier, (Vertex{cat.index_of("Glucose_H"), L}));
  EXPECT_NEAR(prof.rows[3].p_treated, 0.193, 0.03);
  EXPECT_NEAR(prof.rows[3].p_untreated, 0.139, 0.03);
  for (const auto& r : prof.rows) {
    ASSERT_TRUE(r.ratio);
    EXPECT_GT(*r.ratio, 1.0) << vertex_name(r.stratifier, cat);
  }
  // counts sum to the diabetic population
  std::size_t dm = 0;
  for (const auto& p : c.patients()) dm += p.features.get(cat.index_of("E11"), H);
  EXPECT_EQ(prof.n_treated + prof.n_untreated, dm);
}

TEST(Confounding, IndependentToyHasRatioOne) {
  // f1@h present in half of each treatment group
  std::vector<Patient> ps;
  for (int k = 0; k < 8; ++k) {
    std::string h = std::string(k < 4 ? "1" : "0") + (k % 2 ? "1" : "0");
    ps.push_back(row("p" + std::to_string(k), h, "00", "00"));
  }
  Cohort c(plain_catalog(2), ps);
  auto prof = confounding_profile(c, {0, H}, {{1, H}, {1, L}});
  ASSERT_TRUE(prof.rows[0].ratio);
  EXPECT_DOUBLE_EQ(*prof.rows[0].ratio, 1.0);
  EXPECT_FALSE(prof.rows[1].ratio);  // never set among untreated
  EXPECT_THROW(confounding_profile(c, {0, L}, {{1, H}}), ValidationError);
}

TEST(Cascade, JsonAndTextAgree) {
  const auto& c = calibrated().cohort;
  const auto& cat = c.catalog();
  auto steps = cascade_report(c);
  auto prof = insulin_profile(c);
  auto j = cascade_json(steps, prof, cat);
  ASSERT_EQ(j["steps"].size(), 2u);
  EXPECT_DOUBLE_EQ(j["steps"][0]["relative_risk"].get<double>(), steps[0].relative_risk);
  EXPECT_EQ(j["steps"][1]["outcome"], "outcome");
  EXPECT_EQ(j["confounding"]["rows"].size(), 4u);
  auto text = render_text(steps, prof, cat);
  EXPECT_NE(text.find("N18_history -> N17_last"), std::string::npos);
  EXPECT_NE(text.find("N17_last -> outcome"), std::string::npos);
  char rr[16];
  std::snprintf(rr, sizeof rr, "%.2f", steps[0].relative_risk);
  EXPECT_NE(text.find(rr), std::string::npos);
}
