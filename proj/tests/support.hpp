#pragma once

#include <atomic>
#include <filesystem>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "seqcf/catalog.hpp"
#include "seqcf/cohort.hpp"
#include "seqcf/depgraph.hpp"
#include "seqcf/riskmodel.hpp"
#include "seqcf/synth.hpp"

namespace seqcf::test {

using Cat = std::shared_ptr<const FeatureCatalog>;

inline Cat share(FeatureCatalog c) { return std::make_shared<const FeatureCatalog>(std::move(c)); }

inline Cat default_cat() {
  static const Cat c = share(default_catalog());
  return c;
}

// Catalog of `d` Controllable features named f0..f{d-1}.
inline Cat plain_catalog(std::size_t d) {
  std::vector<Feature> fs;
  for (std::size_t i = 0; i < d; ++i) fs.push_back({0, "f" + std::to_string(i), "", TaxonomyClass::Controllable});
  return share(FeatureCatalog::build(fs, {}));
}

// One patient from three period strings of '0'/'1', one char per feature.
inline Patient row(std::string id, const std::string& h, const std::string& s, const std::string& l,
                   bool y = false) {
  Patient p;
  p.patient_id = std::move(id);
  p.features = TemporalFeatureVector(h.size());
  const std::string* cols[] = {&h, &s, &l};
  for (auto t : kPeriods) {
    for (std::size_t i = 0; i < h.size(); ++i) p.features.set(i, t, (*cols[index(t)])[i] == '1');
  }
  p.outcome = y;
  return p;
}

inline TemporalFeatureVector vec(const std::string& h, const std::string& s, const std::string& l) {
  return row("x", h, s, l).features;
}

// Sets bits named "<code>@<period>" on an all-zero vector of the catalog's size.
inline TemporalFeatureVector bits(const FeatureCatalog& cat, std::initializer_list<const char*> on) {
  TemporalFeatureVector x(cat.size());
  for (std::string s : on) {
    auto at = s.find('@');
    x.set(cat.index_of(s.substr(0, at)), *parse_period(s.substr(at + 1)), true);
  }
  return x;
}

// The default seed-42 cohort and the artifacts estimated from it, built once
// per test binary.
struct Calibrated {
  Cohort cohort;
  DependencyGraph graph;
  RiskModel model;
};

inline const Calibrated& calibrated() {
  static const Calibrated c = [] {
    Calibrated out;
    out.cohort = generate(SynthConfig{}, default_cat());
    out.graph = estimate_graph(out.cohort);
    out.model = train(out.cohort);
    return out;
  }();
  return c;
}

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("seqcf_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace seqcf::test
