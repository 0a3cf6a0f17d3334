#pragma once

// Temporal dependency graph over (feature, period) vertices, estimated with a
// relative-risk threshold, plus Laplace-smoothed conditional probability
// tables used by the propagation operator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "seqcf/catalog.hpp"
#include "seqcf/cohort.hpp"
#include "seqcf/error.hpp"

namespace seqcf {

struct Vertex {
  FeatureIndex feature = 0;
  Period period = Period::History;

  friend auto operator<=>(const Vertex& a, const Vertex& b) {
    // topological order: period first, then feature index
    if (a.period != b.period) return a.period <=> b.period;
    return a.feature <=> b.feature;
  }
  friend bool operator==(const Vertex&, const Vertex&) = default;
};

enum class EdgeSource { Estimated, Pathway };

inline std::string_view to_string(EdgeSource s) {
  return s == EdgeSource::Estimated ? "estimated" : "pathway";
}

struct EdgeCounts {
  std::size_t n_src1 = 0;
  std::size_t n_src1_dst1 = 0;
  std::size_t n_src0 = 0;
  std::size_t n_src0_dst1 = 0;

  // NaN when either stratum is empty or both rates are zero; +inf when only
  // the unexposed rate is zero.
  double relative_risk() const {
    if (n_src1 == 0 || n_src0 == 0) return std::numeric_limits<double>::quiet_NaN();
    double p1 = static_cast<double>(n_src1_dst1) / static_cast<double>(n_src1);
    double p0 = static_cast<double>(n_src0_dst1) / static_cast<double>(n_src0);
    if (p0 == 0) {
      return p1 == 0 ? std::numeric_limits<double>::quiet_NaN()
                     : std::numeric_limits<double>::infinity();
    }
    return p1 / p0;
  }
};

struct Edge {
  Vertex src;
  Vertex dst;
  double relative_risk = 0;
  EdgeCounts counts;
  EdgeSource source = EdgeSource::Estimated;
};

// P-hat(target = 1 | parent bits), one entry per observed parent pattern.
class ConditionalTable {
 public:
  struct Cell {
    std::size_t n = 0;
    std::size_t positives = 0;
  };

  ConditionalTable() = default;
  ConditionalTable(Vertex target, std::vector<Vertex> parents, double alpha,
                   double marginal, std::map<std::uint32_t, Cell> cells)
      : target_(target), parents_(std::move(parents)), alpha_(alpha),
        marginal_(marginal), cells_(std::move(cells)) {}

  const Vertex& target() const noexcept { return target_; }
  const std::vector<Vertex>& parents() const noexcept { return parents_; }
  double alpha() const noexcept { return alpha_; }
  double marginal() const noexcept { return marginal_; }
  const std::map<std::uint32_t, Cell>& cells() const noexcept { return cells_; }

  // Pattern bit k is parent k.
  static std::uint32_t pattern_of(const std::vector<bool>& bits) {
    std::uint32_t key = 0;
    for (std::size_t k = 0; k < bits.size(); ++k) {
      if (bits[k]) key |= (1U << k);
    }
    return key;
  }

  double probability(std::uint32_t pattern) const {
    auto it = cells_.find(pattern);
    if (it == cells_.end() || it->second.n == 0) return marginal_;
    const auto& c = it->second;
    return (static_cast<double>(c.positives) + alpha_) /
           (static_cast<double>(c.n) + 2.0 * alpha_);
  }

  std::uint32_t pattern_for(const TemporalFeatureVector& tau) const {
    std::uint32_t key = 0;
    for (std::size_t k = 0; k < parents_.size(); ++k) {
      if (tau.get(parents_[k].feature, parents_[k].period)) key |= (1U << k);
    }
    return key;
  }

 private:
  Vertex target_;
  std::vector<Vertex> parents_;
  double alpha_ = 1.0;
  double marginal_ = 0;
  std::map<std::uint32_t, Cell> cells_;
};

inline double conditional_probability(const ConditionalTable& theta,
                                      const std::vector<bool>& parent_bits) {
  if (parent_bits.size() != theta.parents().size()) {
    throw ValidationError("parent pattern length " + std::to_string(parent_bits.size()) +
                          " does not match " + std::to_string(theta.parents().size()) +
                          " parents");
  }
  return theta.probability(ConditionalTable::pattern_of(parent_bits));
}

struct GraphOptions {
  double gamma = 2.0;
  std::size_t min_support = 25;
  double alpha = 1.0;
  std::size_t max_parents = 4;
};

class DependencyGraph {
 public:
  DependencyGraph() = default;
  DependencyGraph(std::size_t d, GraphOptions options, std::vector<Edge> edges,
                  std::vector<ConditionalTable> tables)
      : d_(d), options_(options), edges_(std::move(edges)), tables_(std::move(tables)) {
    std::sort(edges_.begin(), edges_.end(), [](const Edge& a, const Edge& b) {
      return a.dst != b.dst ? a.dst < b.dst : a.src < b.src;
    });
    for (const auto& e : edges_) {
      if (!(e.src.period < e.dst.period)) {
        throw ValidationError("edge does not point forward in time");
      }
      if (e.src.feature >= d_ || e.dst.feature >= d_) {
        throw ValidationError("edge references unknown feature");
      }
    }
    in_.assign(3 * d_, {});
    out_.assign(3 * d_, {});
    for (std::size_t k = 0; k < edges_.size(); ++k) {
      in_[slot(edges_[k].dst)].push_back(k);
      out_[slot(edges_[k].src)].push_back(k);
    }
    table_of_.assign(3 * d_, -1);
    for (std::size_t k = 0; k < tables_.size(); ++k) {
      table_of_[slot(tables_[k].target())] = static_cast<long>(k);
    }
  }

  std::size_t dim() const noexcept { return d_; }
  const GraphOptions& options() const noexcept { return options_; }
  double gamma() const noexcept { return options_.gamma; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const std::vector<ConditionalTable>& tables() const noexcept { return tables_; }

  bool contains(const Vertex& v) const { return v.feature < d_; }

  std::vector<const Edge*> incoming(const Vertex& v) const {
    check(v);
    std::vector<const Edge*> out;
    for (auto k : in_[slot(v)]) out.push_back(&edges_[k]);
    return out;
  }
  std::vector<const Edge*> outgoing(const Vertex& v) const {
    check(v);
    std::vector<const Edge*> out;
    for (auto k : out_[slot(v)]) out.push_back(&edges_[k]);
    return out;
  }

  const ConditionalTable* table(const Vertex& v) const {
    check(v);
    auto k = table_of_[slot(v)];
    return k < 0 ? nullptr : &tables_[static_cast<std::size_t>(k)];
  }

  // True when a directed path src ->* dst exists (length >= 1).
  bool has_path(const Vertex& src, const Vertex& dst) const {
    check(src);
    check(dst);
    std::vector<std::uint8_t> seen(3 * d_, 0);
    std::vector<Vertex> stack{src};
    while (!stack.empty()) {
      auto v = stack.back();
      stack.pop_back();
      for (auto k : out_[slot(v)]) {
        const auto& w = edges_[k].dst;
        if (w == dst) return true;
        if (!seen[slot(w)]) {
          seen[slot(w)] = 1;
          stack.push_back(w);
        }
      }
    }
    return false;
  }

  // Vertices in topological order (period, feature).
  std::vector<Vertex> vertices() const {
    std::vector<Vertex> vs;
    for (auto t : kPeriods) {
      for (FeatureIndex i = 0; i < d_; ++i) vs.push_back({i, t});
    }
    return vs;
  }

 private:
  std::size_t slot(const Vertex& v) const { return index(v.period) * d_ + v.feature; }
  void check(const Vertex& v) const {
    if (!contains(v)) throw NotFoundError("unknown vertex");
  }

  std::size_t d_ = 0;
  GraphOptions options_;
  std::vector<Edge> edges_;
  std::vector<ConditionalTable> tables_;
  std::vector<std::vector<std::size_t>> in_;
  std::vector<std::vector<std::size_t>> out_;
  std::vector<long> table_of_;
};

// Transitive closure over reversed edges, excluding v itself.
inline std::set<Vertex> ancestors_of(const DependencyGraph& graph, const Vertex& v) {
  if (!graph.contains(v)) throw NotFoundError("unknown vertex");
  std::set<Vertex> out;
  std::vector<Vertex> stack{v};
  while (!stack.empty()) {
    auto w = stack.back();
    stack.pop_back();
    for (const auto* e : graph.incoming(w)) {
      if (out.insert(e->src).second) stack.push_back(e->src);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace detail {

inline EdgeCounts count_pair(const ColumnIndex& cols, const Vertex& src, const Vertex& dst) {
  const auto& s = cols.column(src.feature, src.period);
  const auto& t = cols.column(dst.feature, dst.period);
  EdgeCounts c;
  c.n_src1 = s.count();
  c.n_src1_dst1 = Bitset::count_and(s, t);
  c.n_src0 = cols.n() - c.n_src1;
  c.n_src0_dst1 = t.count() - c.n_src1_dst1;
  return c;
}

// Previous period of the same feature; History has none.
inline std::optional<Vertex> own_earlier(const Vertex& v) {
  if (v.period == Period::History) return std::nullopt;
  return Vertex{v.feature, static_cast<Period>(index(v.period) - 1)};
}

}  // namespace detail

// Laplace-smoothed table of `target` given `parents` (sorted into
// topological order before fitting).
inline ConditionalTable fit_conditional_table(const Cohort& cohort, const Vertex& target,
                                  std::vector<Vertex> parents, double alpha) {
  std::sort(parents.begin(), parents.end());
  std::map<std::uint32_t, ConditionalTable::Cell> cells;
  std::size_t positives = 0;
  for (const auto& p : cohort.patients()) {
    std::uint32_t key = 0;
    for (std::size_t k = 0; k < parents.size(); ++k) {
      if (p.features.get(parents[k].feature, parents[k].period)) key |= (1U << k);
    }
    bool y = p.features.get(target.feature, target.period);
    auto& cell = cells[key];
    ++cell.n;
    cell.positives += y;
    positives += y;
  }
  double marginal = cohort.empty() ? 0.0
                                   : static_cast<double>(positives) / static_cast<double>(cohort.size());
  return ConditionalTable(target, std::move(parents), alpha, marginal, std::move(cells));
}

// Keeps (i,t)->(j,t') for t < t' when both source strata have at least
// min_support patients and RR > gamma. Catalog pathways are always added for
// every forward period pair. Same-period edges are never created.
inline DependencyGraph estimate_graph(const Cohort& cohort, GraphOptions options = {}) {
  if (cohort.empty()) throw ValidationError("empty cohort");
  if (!(options.gamma > 0)) throw ValidationError("gamma must be positive", "gamma");
  const auto& cat = cohort.catalog();
  const std::size_t d = cat.size();
  ColumnIndex cols(cohort);

  std::set<std::pair<Vertex, Vertex>> pathway_pairs;
  for (const auto& pw : cat.pathways()) {
    for (auto t : kPeriods) {
      for (auto u : kPeriods) {
        if (t < u) pathway_pairs.insert({{pw.intervention, t}, {pw.target, u}});
      }
    }
  }

  std::vector<Edge> edges;
  for (auto t : kPeriods) {
    for (auto u : kPeriods) {
      if (!(t < u)) continue;
      for (FeatureIndex i = 0; i < d; ++i) {
        for (FeatureIndex j = 0; j < d; ++j) {
          Vertex src{i, t}, dst{j, u};
          auto counts = detail::count_pair(cols, src, dst);
          double rr = counts.relative_risk();
          if (pathway_pairs.count({src, dst})) {
            edges.push_back({src, dst, rr, counts, EdgeSource::Pathway});
            continue;
          }
          if (counts.n_src1 < options.min_support || counts.n_src0 < options.min_support) continue;
          if (rr > options.gamma) edges.push_back({src, dst, rr, counts, EdgeSource::Estimated});
        }
      }
    }
  }

  // Parent sets: pathway edges first, then estimated edges by RR descending,
  // capped at max_parents; the vertex's own earlier period is always added.
  std::vector<ConditionalTable> tables;
  for (auto u : {Period::Past, Period::Last}) {
    for (FeatureIndex j = 0; j < d; ++j) {
      Vertex target{j, u};
      std::vector<const Edge*> in;
      for (const auto& e : edges) {
        if (e.dst == target) in.push_back(&e);
      }
      std::stable_sort(in.begin(), in.end(), [](const Edge* a, const Edge* b) {
        if (a->source != b->source) return a->source == EdgeSource::Pathway;
        double ra = std::isnan(a->relative_risk) ? -1.0 : a->relative_risk;
        double rb = std::isnan(b->relative_risk) ? -1.0 : b->relative_risk;
        if (ra != rb) return ra > rb;
        return a->src < b->src;
      });
      std::vector<Vertex> parents;
      for (const auto* e : in) {
        if (parents.size() >= options.max_parents) break;
        parents.push_back(e->src);
      }
      if (auto prev = detail::own_earlier(target);
          prev && std::find(parents.begin(), parents.end(), *prev) == parents.end()) {
        parents.push_back(*prev);
      }
      tables.push_back(fit_conditional_table(cohort, target, std::move(parents), options.alpha));
    }
  }
  return DependencyGraph(d, options, std::move(edges), std::move(tables));
}

// ---------------------------------------------------------------------------
// JSON export / import. Non-finite relative risks are written as null.

inline nlohmann::json vertex_json(const FeatureCatalog& cat, const Vertex& v) {
  return {{"code", cat.code(v.feature)}, {"period", to_string(v.period)}};
}

inline Vertex vertex_from_json(const FeatureCatalog& cat, const nlohmann::json& j) {
  auto period = parse_period(j.at("period").get<std::string>());
  if (!period) throw ValidationError("invalid period in graph file");
  return {cat.index_of(j.at("code").get<std::string>()), *period};
}

inline nlohmann::json to_json(const DependencyGraph& g, const FeatureCatalog& cat) {
  nlohmann::json j;
  j["gamma"] = g.options().gamma;
  j["min_support"] = g.options().min_support;
  j["alpha"] = g.options().alpha;
  j["max_parents"] = g.options().max_parents;
  j["vertices"] = nlohmann::json::array();
  for (const auto& v : g.vertices()) j["vertices"].push_back(vertex_json(cat, v));
  j["edges"] = nlohmann::json::array();
  for (const auto& e : g.edges()) {
    nlohmann::json je;
    je["src"] = vertex_json(cat, e.src);
    je["dst"] = vertex_json(cat, e.dst);
    je["relative_risk"] = std::isfinite(e.relative_risk) ? nlohmann::json(e.relative_risk)
                                                         : nlohmann::json(nullptr);
    je["counts"] = {{"n_src1", e.counts.n_src1},
                    {"n_src1_dst1", e.counts.n_src1_dst1},
                    {"n_src0", e.counts.n_src0},
                    {"n_src0_dst1", e.counts.n_src0_dst1}};
    je["source"] = to_string(e.source);
    j["edges"].push_back(std::move(je));
  }
  j["tables"] = nlohmann::json::array();
  for (const auto& t : g.tables()) {
    nlohmann::json jt;
    jt["target"] = vertex_json(cat, t.target());
    jt["parents"] = nlohmann::json::array();
    for (const auto& p : t.parents()) jt["parents"].push_back(vertex_json(cat, p));
    jt["marginal"] = t.marginal();
    jt["cells"] = nlohmann::json::array();
    for (const auto& [key, cell] : t.cells()) {
      std::string pattern;
      for (std::size_t k = 0; k < t.parents().size(); ++k) pattern += (key >> k) & 1U ? '1' : '0';
      jt["cells"].push_back({{"pattern", pattern},
                             {"n", cell.n},
                             {"positives", cell.positives},
                             {"probability", t.probability(key)}});
    }
    j["tables"].push_back(std::move(jt));
  }
  return j;
}

inline DependencyGraph graph_from_json(const nlohmann::json& j, const FeatureCatalog& cat) {
  try {
    GraphOptions o;
    o.gamma = j.at("gamma").get<double>();
    o.min_support = j.at("min_support").get<std::size_t>();
    o.alpha = j.at("alpha").get<double>();
    o.max_parents = j.value("max_parents", std::size_t{4});
    std::vector<Edge> edges;
    for (const auto& je : j.at("edges")) {
      Edge e;
      e.src = vertex_from_json(cat, je.at("src"));
      e.dst = vertex_from_json(cat, je.at("dst"));
      const auto& c = je.at("counts");
      e.counts = {c.at("n_src1").get<std::size_t>(), c.at("n_src1_dst1").get<std::size_t>(),
                  c.at("n_src0").get<std::size_t>(), c.at("n_src0_dst1").get<std::size_t>()};
      e.relative_risk = e.counts.relative_risk();
      e.source = je.at("source").get<std::string>() == "pathway" ? EdgeSource::Pathway
                                                                  : EdgeSource::Estimated;
      edges.push_back(e);
    }
    std::vector<ConditionalTable> tables;
    for (const auto& jt : j.at("tables")) {
      auto target = vertex_from_json(cat, jt.at("target"));
      std::vector<Vertex> parents;
      for (const auto& jp : jt.at("parents")) parents.push_back(vertex_from_json(cat, jp));
      std::map<std::uint32_t, ConditionalTable::Cell> cells;
      for (const auto& jc : jt.at("cells")) {
        auto pattern = jc.at("pattern").get<std::string>();
        if (pattern.size() != parents.size()) throw ValidationError("table pattern length mismatch");
        std::uint32_t key = 0;
        for (std::size_t k = 0; k < pattern.size(); ++k) {
          if (pattern[k] == '1') key |= (1U << k);
        }
        cells[key] = {jc.at("n").get<std::size_t>(), jc.at("positives").get<std::size_t>()};
      }
      tables.emplace_back(target, std::move(parents), o.alpha, jt.at("marginal").get<double>(),
                          std::move(cells));
    }
    return DependencyGraph(cat.size(), o, std::move(edges), std::move(tables));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid graph file: ") + e.what());
  }
}

}  // namespace seqcf
