#pragma once

// Outcome scorer f(h, s, l) -> (0, 1): L2-regularized logistic regression over
// the 3d flattened period bits, trained by fixed-budget full-batch gradient
// descent so that fits are bit-reproducible.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "json.hpp"
#include "seqcf/cohort.hpp"
#include "seqcf/error.hpp"
#include "seqcf/rng.hpp"

namespace seqcf {

// Anything that maps a temporal feature vector to a risk in (0, 1).
class RiskScorer {
 public:
  virtual ~RiskScorer() = default;
  virtual double score(const TemporalFeatureVector& tau) const = 0;
};

struct TrainOptions {
  double regularization = 1.0;
  std::size_t iterations = 500;
  double step_size = 0.1;
  std::uint64_t seed = 0;  // recorded; training itself draws no randomness
};

inline double sigmoid(double z) {
  if (z >= 0) {
    double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow
inline double softplus(double z) {
  return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

class RiskModel : public RiskScorer {
 public:
  RiskModel() = default;
  RiskModel(std::size_t d, std::vector<double> weights, TrainOptions meta = {})
      : d_(d), weights_(std::move(weights)), meta_(meta) {
    if (weights_.size() != 3 * d_ + 1) {
      throw ValidationError("weight vector length must be 3d + 1");
    }
  }

  static RiskModel zeros(std::size_t d) { return RiskModel(d, std::vector<double>(3 * d + 1, 0.0)); }

  std::size_t dim() const noexcept { return d_; }
  const std::vector<double>& weights() const noexcept { return weights_; }
  const TrainOptions& meta() const noexcept { return meta_; }
  double intercept() const { return weights_.back(); }
  double weight(FeatureIndex f, Period t) const { return weights_.at(index(t) * d_ + f); }

  double linear_predictor(const TemporalFeatureVector& tau) const {
    if (tau.dim() != d_) throw ValidationError("dimension mismatch: vector has " + std::to_string(tau.dim()) + " features, model " + std::to_string(d_));
    double z = weights_.back();
    for (auto t : kPeriods) {
      const auto& bits = tau.period(t);
      const double* w = weights_.data() + index(t) * d_;
      for (std::size_t i = 0; i < d_; ++i) {
        if (bits[i]) z += w[i];
      }
    }
    return z;
  }

  double score(const TemporalFeatureVector& tau) const override {
    return sigmoid(linear_predictor(tau));
  }

 private:
  std::size_t d_ = 0;
  std::vector<double> weights_;
  TrainOptions meta_;
};

// ---------------------------------------------------------------------------
// Objective: mean log-loss + (lambda / 2n) * ||w||^2 (intercept unpenalized).

namespace detail {

struct Design {
  std::size_t n = 0;
  std::size_t p = 0;  // 3d + 1, last column is the intercept
  std::vector<std::vector<std::uint32_t>> active;  // active feature columns per row
  std::vector<double> y;
};

inline Design design_of(const Cohort& cohort) {
  Design x;
  const std::size_t d = cohort.catalog().size();
  x.n = cohort.size();
  x.p = 3 * d + 1;
  x.active.resize(x.n);
  x.y.resize(x.n);
  for (std::size_t r = 0; r < x.n; ++r) {
    const auto& tau = cohort[r].features;
    for (auto t : kPeriods) {
      const auto& bits = tau.period(t);
      for (std::size_t i = 0; i < d; ++i) {
        if (bits[i]) x.active[r].push_back(static_cast<std::uint32_t>(index(t) * d + i));
      }
    }
    x.y[r] = cohort[r].outcome ? 1.0 : 0.0;
  }
  return x;
}

inline double linear(const Design& x, std::size_t r, std::span<const double> w) {
  double z = w[x.p - 1];
  for (auto c : x.active[r]) z += w[c];
  return z;
}

inline double loss(const Design& x, std::span<const double> w, double lambda) {
  double s = 0;
  for (std::size_t r = 0; r < x.n; ++r) {
    double z = linear(x, r, w);
    s += softplus(z) - x.y[r] * z;
  }
  double reg = 0;
  for (std::size_t c = 0; c + 1 < x.p; ++c) reg += w[c] * w[c];
  double n = static_cast<double>(x.n);
  return s / n + lambda / (2.0 * n) * reg;
}

inline std::vector<double> gradient(const Design& x, std::span<const double> w, double lambda) {
  std::vector<double> g(x.p, 0.0);
  for (std::size_t r = 0; r < x.n; ++r) {
    double e = sigmoid(linear(x, r, w)) - x.y[r];
    for (auto c : x.active[r]) g[c] += e;
    g[x.p - 1] += e;
  }
  double n = static_cast<double>(x.n);
  for (std::size_t c = 0; c < x.p; ++c) g[c] /= n;
  for (std::size_t c = 0; c + 1 < x.p; ++c) g[c] += lambda / n * w[c];
  return g;
}

inline void require_both_classes(const Cohort& cohort) {
  auto cases = cohort.n_cases();
  if (cases == 0 || cases == cohort.size()) {
    throw ValidationError("single-class cohort: both outcome classes are required");
  }
}

}  // namespace detail

inline double training_loss(const Cohort& cohort, std::span<const double> weights,
                            double regularization) {
  auto x = detail::design_of(cohort);
  if (weights.size() != x.p) throw ValidationError("weight vector length must be 3d + 1");
  return detail::loss(x, weights, regularization);
}

inline std::vector<double> training_gradient(const Cohort& cohort, std::span<const double> weights,
                                             double regularization) {
  auto x = detail::design_of(cohort);
  if (weights.size() != x.p) throw ValidationError("weight vector length must be 3d + 1");
  return detail::gradient(x, weights, regularization);
}

// Zero-initialized full-batch gradient descent. If `loss_trace` is given it
// receives the objective before every step and after the last one.
inline RiskModel train(const Cohort& cohort, TrainOptions options = {},
                       std::vector<double>* loss_trace = nullptr) {
  detail::require_both_classes(cohort);
  if (options.regularization < 0) throw ValidationError("regularization must be non-negative", "regularization");
  auto x = detail::design_of(cohort);
  std::vector<double> w(x.p, 0.0);
  for (std::size_t it = 0; it < options.iterations; ++it) {
    if (loss_trace) loss_trace->push_back(detail::loss(x, w, options.regularization));
    auto g = detail::gradient(x, w, options.regularization);
    for (std::size_t c = 0; c < x.p; ++c) w[c] -= options.step_size * g[c];
  }
  if (loss_trace) loss_trace->push_back(detail::loss(x, w, options.regularization));
  return RiskModel(cohort.catalog().size(), std::move(w), options);
}

// Mann-Whitney AUROC: share of (case, control) pairs ranked correctly, ties
// count one half. Computed from midranks in O(n log n).
inline double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw ValidationError("scores and labels differ in length");
  std::size_t pos = 0;
  for (auto l : labels) pos += l != 0;
  std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw ValidationError("single-class cohort: AUROC undefined");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  double rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    double midrank = (static_cast<double>(i) + static_cast<double>(j) + 1.0) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) rank_sum += midrank;
    }
    i = j;
  }
  double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

inline double auroc(const RiskScorer& model, const Cohort& cohort) {
  std::vector<double> s;
  std::vector<std::uint8_t> y;
  s.reserve(cohort.size());
  for (const auto& p : cohort.patients()) {
    s.push_back(model.score(p.features));
    y.push_back(p.outcome ? 1 : 0);
  }
  return auroc(s, y);
}

// Seeded Fisher-Yates shuffle; the last `test_fraction` of patients form the
// held-out split.
inline std::pair<Cohort, Cohort> split_cohort(const Cohort& cohort, std::uint64_t seed,
                                              double test_fraction = 0.2) {
  std::vector<std::size_t> order(cohort.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    auto j = static_cast<std::size_t>(rng.bits(0x5b1u, i) % i);
    std::swap(order[i - 1], order[j]);
  }
  auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(order.size())));
  std::vector<Patient> train_p, test_p;
  for (std::size_t k = 0; k < order.size(); ++k) {
    (k + n_test < order.size() ? train_p : test_p).push_back(cohort[order[k]]);
  }
  return {Cohort(cohort.catalog_ptr(), std::move(train_p)),
          Cohort(cohort.catalog_ptr(), std::move(test_p))};
}

// Max |analytic - central difference| over all coordinates of the training
// gradient, evaluated at `weights`.
inline double finite_difference_gradient_check(const Cohort& cohort, std::span<const double> weights,
                                               double regularization = 1.0, double step = 1e-5) {
  auto x = detail::design_of(cohort);
  if (weights.size() != x.p) throw ValidationError("weight vector length must be 3d + 1");
  auto g = detail::gradient(x, weights, regularization);
  std::vector<double> w(weights.begin(), weights.end());
  double worst = 0;
  for (std::size_t c = 0; c < x.p; ++c) {
    double orig = w[c];
    w[c] = orig + step;
    double up = detail::loss(x, w, regularization);
    w[c] = orig - step;
    double down = detail::loss(x, w, regularization);
    w[c] = orig;
    worst = std::max(worst, std::abs((up - down) / (2.0 * step) - g[c]));
  }
  return worst;
}

// Same check at a fixed pseudo-random point in [-0.5, 0.5]^p.
inline double finite_difference_gradient_check(const Cohort& cohort, double regularization = 1.0,
                                               double step = 1e-5, std::uint64_t seed = 7) {
  CounterRng rng(seed);
  std::vector<double> w(3 * cohort.catalog().size() + 1);
  for (std::size_t c = 0; c < w.size(); ++c) w[c] = rng.uniform(0x9c, c) - 0.5;
  return finite_difference_gradient_check(cohort, w, regularization, step);
}

inline nlohmann::json to_json(const RiskModel& m) {
  return {{"d", m.dim()},
          {"weights", m.weights()},
          {"meta",
           {{"iterations", m.meta().iterations},
            {"step_size", m.meta().step_size},
            {"regularization", m.meta().regularization},
            {"seed", m.meta().seed}}}};
}

inline RiskModel risk_model_from_json(const nlohmann::json& j) {
  try {
    TrainOptions meta;
    if (j.contains("meta")) {
      const auto& m = j.at("meta");
      meta.iterations = m.value("iterations", meta.iterations);
      meta.step_size = m.value("step_size", meta.step_size);
      meta.regularization = m.value("regularization", meta.regularization);
      meta.seed = m.value("seed", meta.seed);
    }
    return RiskModel(j.at("d").get<std::size_t>(), j.at("weights").get<std::vector<double>>(), meta);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid model file: ") + e.what());
  }
}

}  // namespace seqcf
