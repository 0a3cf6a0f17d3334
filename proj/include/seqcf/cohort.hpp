#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "seqcf/catalog.hpp"
#include "seqcf/error.hpp"

namespace seqcf {

enum class Period : std::uint8_t { History = 0, Past = 1, Last = 2 };

inline constexpr std::array<Period, 3> kPeriods = {Period::History, Period::Past,
                                                   Period::Last};

inline constexpr std::size_t index(Period p) noexcept {
  return static_cast<std::size_t>(p);
}

inline std::string_view to_string(Period p) {
  switch (p) {
    case Period::History: return "history";
    case Period::Past: return "past";
    case Period::Last: return "last";
  }
  return "?";
}

inline std::optional<Period> parse_period(std::string_view s) {
  if (s == "history") return Period::History;
  if (s == "past") return Period::Past;
  if (s == "last") return Period::Last;
  return std::nullopt;
}

// Binary presence indicators of d features in each of the three periods.
class TemporalFeatureVector {
 public:
  TemporalFeatureVector() = default;
  explicit TemporalFeatureVector(std::size_t d) {
    for (auto& v : bits_) v.assign(d, 0);
  }

  std::size_t dim() const noexcept { return bits_[0].size(); }

  bool get(FeatureIndex f, Period t) const { return bits_[index(t)].at(f) != 0; }
  void set(FeatureIndex f, Period t, bool v) {
    bits_[index(t)].at(f) = v ? 1 : 0;
  }

  const std::vector<std::uint8_t>& period(Period t) const {
    return bits_[index(t)];
  }

  // Flattened view in (period, feature) order: h then s then l.
  std::size_t flat_size() const noexcept { return 3 * dim(); }
  bool flat(std::size_t k) const { return bits_[k / dim()][k % dim()] != 0; }
  void set_flat(std::size_t k, bool v) { bits_[k / dim()][k % dim()] = v ? 1 : 0; }

  std::size_t hamming(const TemporalFeatureVector& other) const {
    std::size_t n = 0;
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t i = 0; i < dim(); ++i) n += bits_[t][i] != other.bits_[t][i];
    }
    return n;
  }

  friend bool operator==(const TemporalFeatureVector&,
                         const TemporalFeatureVector&) = default;

 private:
  std::array<std::vector<std::uint8_t>, 3> bits_;
};

struct Patient {
  std::string patient_id;
  TemporalFeatureVector features;
  bool outcome = false;

  friend bool operator==(const Patient&, const Patient&) = default;
};

class Cohort {
 public:
  Cohort() = default;
  Cohort(std::shared_ptr<const FeatureCatalog> catalog,
         std::vector<Patient> patients)
      : catalog_(std::move(catalog)), patients_(std::move(patients)) {
    if (!catalog_) throw ValidationError("cohort requires a catalog");
    std::unordered_set<std::string> ids;
    for (const auto& p : patients_) {
      if (p.patient_id.empty()) throw ValidationError("empty patient_id");
      if (!ids.insert(p.patient_id).second) {
        throw ValidationError("duplicate patient_id: " + p.patient_id,
                              p.patient_id);
      }
      if (p.features.dim() != catalog_->size()) {
        throw ValidationError("patient " + p.patient_id +
                              " vector length does not match catalog");
      }
    }
  }

  const FeatureCatalog& catalog() const { return *catalog_; }
  std::shared_ptr<const FeatureCatalog> catalog_ptr() const { return catalog_; }
  const std::vector<Patient>& patients() const noexcept { return patients_; }
  std::size_t size() const noexcept { return patients_.size(); }
  bool empty() const noexcept { return patients_.empty(); }
  const Patient& operator[](std::size_t i) const { return patients_[i]; }

  const Patient& find(std::string_view id) const {
    for (const auto& p : patients_) {
      if (p.patient_id == id) return p;
    }
    throw NotFoundError("unknown patient: " + std::string(id), "patient_id");
  }

  // Header columns the source file did not provide (bits defaulted to 0).
  const std::vector<std::string>& missing_columns() const noexcept {
    return missing_columns_;
  }
  void set_missing_columns(std::vector<std::string> cols) {
    missing_columns_ = std::move(cols);
  }

  std::size_t n_cases() const {
    return static_cast<std::size_t>(std::count_if(
        patients_.begin(), patients_.end(), [](const Patient& p) { return p.outcome; }));
  }

 private:
  std::shared_ptr<const FeatureCatalog> catalog_;
  std::vector<Patient> patients_;
  std::vector<std::string> missing_columns_;
};

// ---------------------------------------------------------------------------
// Column-major bitsets over patients for fast stratified counting.

class Bitset {
 public:
  Bitset() = default;
  explicit Bitset(std::size_t n) : n_(n), words_((n + 63) / 64, 0) {}

  static Bitset ones(std::size_t n) {
    Bitset b(n);
    for (std::size_t i = 0; i < n; ++i) b.set(i);
    return b;
  }

  std::size_t size() const noexcept { return n_; }
  void set(std::size_t i) { words_[i / 64] |= (std::uint64_t{1} << (i % 64)); }
  bool test(std::size_t i) const { return (words_[i / 64] >> (i % 64)) & 1U; }

  std::size_t count() const {
    std::size_t c = 0;
    for (auto w : words_) c += static_cast<std::size_t>(std::popcount(w));
    return c;
  }

  Bitset operator&(const Bitset& o) const {
    Bitset r(n_);
    for (std::size_t k = 0; k < words_.size(); ++k) r.words_[k] = words_[k] & o.words_[k];
    return r;
  }
  Bitset operator|(const Bitset& o) const {
    Bitset r(n_);
    for (std::size_t k = 0; k < words_.size(); ++k) r.words_[k] = words_[k] | o.words_[k];
    return r;
  }
  Bitset operator~() const {
    Bitset r(n_);
    for (std::size_t k = 0; k < words_.size(); ++k) r.words_[k] = ~words_[k];
    r.trim();
    return r;
  }

  // popcount(a & b) without materializing the intersection.
  static std::size_t count_and(const Bitset& a, const Bitset& b) {
    std::size_t c = 0;
    for (std::size_t k = 0; k < a.words_.size(); ++k) {
      c += static_cast<std::size_t>(std::popcount(a.words_[k] & b.words_[k]));
    }
    return c;
  }

 private:
  void trim() {
    if (n_ % 64 != 0 && !words_.empty()) {
      words_.back() &= (std::uint64_t{1} << (n_ % 64)) - 1;
    }
  }

  std::size_t n_ = 0;
  std::vector<std::uint64_t> words_;
};

class ColumnIndex {
 public:
  explicit ColumnIndex(const Cohort& cohort)
      : n_(cohort.size()), d_(cohort.catalog().size()), outcome_(n_) {
    cols_.assign(3 * d_, Bitset(n_));
    for (std::size_t p = 0; p < n_; ++p) {
      const auto& tau = cohort[p].features;
      for (auto t : kPeriods) {
        const auto& bits = tau.period(t);
        for (std::size_t i = 0; i < d_; ++i) {
          if (bits[i]) cols_[index(t) * d_ + i].set(p);
        }
      }
      if (cohort[p].outcome) outcome_.set(p);
    }
  }

  std::size_t n() const noexcept { return n_; }
  std::size_t d() const noexcept { return d_; }
  const Bitset& column(FeatureIndex f, Period t) const {
    return cols_.at(index(t) * d_ + f);
  }
  const Bitset& outcome() const noexcept { return outcome_; }

 private:
  std::size_t n_;
  std::size_t d_;
  std::vector<Bitset> cols_;
  Bitset outcome_;
};

// ---------------------------------------------------------------------------
// Descriptive statistics

inline double prevalence(const Cohort& cohort, FeatureIndex feature, Period period) {
  if (cohort.empty()) throw ValidationError("empty cohort");
  if (feature >= cohort.catalog().size()) {
    throw NotFoundError("feature index out of range");
  }
  std::size_t k = 0;
  for (const auto& p : cohort.patients()) k += p.features.get(feature, period);
  return static_cast<double>(k) / static_cast<double>(cohort.size());
}

struct PersistenceStats {
  double p_given_present = 0;
  double p_given_absent = 0;
  double ratio = 0;  // +inf when p_given_absent == 0
  std::size_t n_present = 0;
  std::size_t n_absent = 0;
};

// P(x^last = 1 | x^history = 1) against P(x^last = 1 | x^history = 0).
inline PersistenceStats persistence_stats(const Cohort& cohort, FeatureIndex feature) {
  if (feature >= cohort.catalog().size()) {
    throw NotFoundError("feature index out of range");
  }
  std::size_t n1 = 0, k1 = 0, n0 = 0, k0 = 0;
  for (const auto& p : cohort.patients()) {
    bool h = p.features.get(feature, Period::History);
    bool l = p.features.get(feature, Period::Last);
    if (h) {
      ++n1;
      k1 += l;
    } else {
      ++n0;
      k0 += l;
    }
  }
  if (n1 == 0) throw ValidationError("empty stratum: present");
  if (n0 == 0) throw ValidationError("empty stratum: absent");
  PersistenceStats s;
  s.n_present = n1;
  s.n_absent = n0;
  s.p_given_present = static_cast<double>(k1) / static_cast<double>(n1);
  s.p_given_absent = static_cast<double>(k0) / static_cast<double>(n0);
  s.ratio = s.p_given_absent == 0 ? std::numeric_limits<double>::infinity()
                                  : s.p_given_present / s.p_given_absent;
  return s;
}

// ---------------------------------------------------------------------------
// Cohort files. CSV: patient_id,<code>__<period>,...,outcome with 0/1 cells.
// JSON lines: {"patient_id":..,"outcome":0|1,"history":[codes],"past":[..],"last":[..]}

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    auto cell = line.substr(start, pos == std::string_view::npos ? line.npos : pos - start);
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.remove_suffix(1);
    while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
    out.emplace_back(cell);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::vector<std::string_view> split_lines(std::string_view s) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < s.size()) {
    auto pos = s.find('\n', start);
    if (pos == std::string_view::npos) pos = s.size();
    auto line = s.substr(start, pos - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = pos + 1;
  }
  return lines;
}

}  // namespace detail

enum class CohortFormat { Csv, JsonLines };

inline CohortFormat cohort_format_for_path(std::string_view path) {
  return path.size() >= 6 && path.substr(path.size() - 6) == ".jsonl"
             ? CohortFormat::JsonLines
             : CohortFormat::Csv;
}

inline Cohort load_cohort_csv(std::string_view source,
                              std::shared_ptr<const FeatureCatalog> catalog) {
  const auto& cat = *catalog;
  auto lines = detail::split_lines(source);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw ValidationError("cohort file has no header row");

  auto header = detail::split_csv_line(lines[0]);
  std::optional<std::size_t> id_col, outcome_col;
  struct Slot {
    FeatureIndex feature;
    Period period;
  };
  std::vector<std::optional<Slot>> slots(header.size());
  std::vector<std::uint8_t> provided(3 * cat.size(), 0);
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto& h = header[c];
    if (h == "patient_id") {
      id_col = c;
      continue;
    }
    if (h == "outcome") {
      outcome_col = c;
      continue;
    }
    auto sep = h.rfind("__");
    if (sep == std::string::npos) {
      throw ValidationError("header column without period suffix: " + h, h);
    }
    auto period = parse_period(std::string_view(h).substr(sep + 2));
    if (!period) {
      throw ValidationError("header column with unparseable period suffix: " + h, h);
    }
    auto code = h.substr(0, sep);
    auto f = cat.find(code);
    if (!f) throw ValidationError("unknown column: " + h, h);
    if (provided[index(*period) * cat.size() + *f]) {
      throw ValidationError("duplicate column: " + h, h);
    }
    provided[index(*period) * cat.size() + *f] = 1;
    slots[c] = Slot{*f, *period};
  }
  if (!id_col) throw ValidationError("missing patient_id column", "patient_id");
  if (!outcome_col) throw ValidationError("missing outcome column", "outcome");

  std::vector<std::string> missing;
  for (auto t : kPeriods) {
    for (std::size_t i = 0; i < cat.size(); ++i) {
      if (!provided[index(t) * cat.size() + i]) {
        missing.push_back(cat.code(i) + "__" + std::string(to_string(t)));
      }
    }
  }

  std::vector<Patient> patients;
  patients.reserve(lines.size() - 1);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    if (lines[r].empty()) continue;
    auto cells = detail::split_csv_line(lines[r]);
    if (cells.size() != header.size()) {
      throw ValidationError("row " + std::to_string(r) + " has " +
                            std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(header.size()));
    }
    Patient p;
    p.features = TemporalFeatureVector(cat.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c == *id_col) {
        p.patient_id = cells[c];
        continue;
      }
      const auto& v = cells[c];
      if (v != "0" && v != "1") {
        throw ValidationError("non-binary value at row " + std::to_string(r), header[c]);
      }
      if (c == *outcome_col) {
        p.outcome = v == "1";
      } else {
        p.features.set(slots[c]->feature, slots[c]->period, v == "1");
      }
    }
    patients.push_back(std::move(p));
  }
  Cohort cohort(std::move(catalog), std::move(patients));
  cohort.set_missing_columns(std::move(missing));
  return cohort;
}

inline Cohort load_cohort_jsonl(std::string_view source,
                                std::shared_ptr<const FeatureCatalog> catalog) {
  const auto& cat = *catalog;
  std::vector<Patient> patients;
  auto lines = detail::split_lines(source);
  std::size_t row = 0;
  for (auto line : lines) {
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    ++row;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw ValidationError("invalid JSON at row " + std::to_string(row));
    }
    Patient p;
    p.patient_id = j.value("patient_id", std::string{});
    auto y = j.value("outcome", -1);
    if (y != 0 && y != 1) {
      throw ValidationError("non-binary value at row " + std::to_string(row), "outcome");
    }
    p.outcome = y == 1;
    p.features = TemporalFeatureVector(cat.size());
    for (auto t : kPeriods) {
      auto key = std::string(to_string(t));
      if (!j.contains(key)) continue;
      for (const auto& code : j.at(key)) {
        auto c = code.get<std::string>();
        auto f = cat.find(c);
        if (!f) throw ValidationError("unknown column: " + c + "__" + key, c);
        p.features.set(*f, t, true);
      }
    }
    patients.push_back(std::move(p));
  }
  return Cohort(std::move(catalog), std::move(patients));
}

inline Cohort load_cohort(std::string_view source,
                          std::shared_ptr<const FeatureCatalog> catalog,
                          CohortFormat format = CohortFormat::Csv) {
  return format == CohortFormat::Csv ? load_cohort_csv(source, std::move(catalog))
                                     : load_cohort_jsonl(source, std::move(catalog));
}

// Feature-major column order: E11__history,E11__past,E11__last,...
inline std::string save_cohort_csv(const Cohort& cohort) {
  const auto& cat = cohort.catalog();
  std::string out = "patient_id";
  for (std::size_t i = 0; i < cat.size(); ++i) {
    for (auto t : kPeriods) {
      out += ',';
      out += cat.code(i);
      out += "__";
      out += to_string(t);
    }
  }
  out += ",outcome\n";
  for (const auto& p : cohort.patients()) {
    out += p.patient_id;
    for (std::size_t i = 0; i < cat.size(); ++i) {
      for (auto t : kPeriods) {
        out += p.features.get(i, t) ? ",1" : ",0";
      }
    }
    out += p.outcome ? ",1\n" : ",0\n";
  }
  return out;
}

inline std::string save_cohort_jsonl(const Cohort& cohort) {
  const auto& cat = cohort.catalog();
  std::string out;
  for (const auto& p : cohort.patients()) {
    nlohmann::json j;
    j["patient_id"] = p.patient_id;
    j["outcome"] = p.outcome ? 1 : 0;
    for (auto t : kPeriods) {
      auto arr = nlohmann::json::array();
      for (std::size_t i = 0; i < cat.size(); ++i) {
        if (p.features.get(i, t)) arr.push_back(cat.code(i));
      }
      j[std::string(to_string(t))] = std::move(arr);
    }
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace seqcf
