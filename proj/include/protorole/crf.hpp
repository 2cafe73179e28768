#pragma once

// Exact inference for the small linking CRF: each argument carries a unary
// score per syntactic position and every unordered pair of arguments shares
// a symmetric position-pair coupling. Inference enumerates all 3^n
// position configurations.

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <utility>
#include <string>
#include <vector>

#include "protorole/corpus.hpp"
#include "protorole/errors.hpp"

namespace protorole {

inline constexpr std::size_t kMaxEnumeratedArity = 8;

using PositionScores = std::array<double, kNumPositions>;

/// Symmetric 3x3 coupling stored as its upper triangle (6 free values).
class PairwiseCoupling {
 public:
  static constexpr std::size_t kSize = 6;

  static constexpr std::size_t slot(std::size_t a, std::size_t b) {
    if (a > b) std::swap(a, b);
    // rows of the upper triangle: (0,0..2) -> 0..2, (1,1..2) -> 3..4, (2,2) -> 5
    return a == 0 ? b : (a == 1 ? 2 + b : 5);
  }

  double operator()(std::size_t a, std::size_t b) const { return v_[slot(a, b)]; }
  double& at(std::size_t a, std::size_t b) { return v_[slot(a, b)]; }
  void set(std::size_t a, std::size_t b, double x) { v_[slot(a, b)] = x; }

  std::span<double, kSize> values() { return v_; }
  std::span<const double, kSize> values() const { return v_; }

  friend bool operator==(const PairwiseCoupling&, const PairwiseCoupling&) = default;

 private:
  std::array<double, kSize> v_{};
};

using Configuration = std::vector<SyntacticPosition>;

inline std::size_t num_configurations(std::size_t n) {
  std::size_t k = 1;
  for (std::size_t i = 0; i < n; ++i) k *= kNumPositions;
  return k;
}

/// Configurations of n arguments in lexicographic order over
/// subject < object < oblique, first argument most significant.
inline const std::vector<Configuration>& configurations(std::size_t n) {
  static const auto tables = [] {
    std::array<std::vector<Configuration>, kMaxEnumeratedArity + 1> t;
    for (std::size_t m = 0; m <= kMaxEnumeratedArity; ++m) {
      const std::size_t count = num_configurations(m);
      t[m].reserve(count);
      for (std::size_t idx = 0; idx < count; ++idx) {
        Configuration c(m);
        std::size_t rest = idx;
        for (std::size_t i = m; i-- > 0;) {
          c[i] = static_cast<SyntacticPosition>(rest % kNumPositions);
          rest /= kNumPositions;
        }
        t[m].push_back(std::move(c));
      }
    }
    return t;
  }();
  if (n > kMaxEnumeratedArity) throw ConfigError("arity too large for enumeration");
  return tables[n];
}

inline std::size_t configuration_index(std::span<const SyntacticPosition> s) {
  std::size_t idx = 0;
  for (auto p : s) idx = idx * kNumPositions + index_of(p);
  return idx;
}

/// Unnormalized log-potential of one configuration.
inline double configuration_logscore(std::span<const PositionScores> unary,
                                     std::span<const SyntacticPosition> s,
                                     const PairwiseCoupling& pairwise) {
  if (unary.size() != s.size()) throw ContractViolation("configuration length mismatch");
  double score = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) score += unary[i][index_of(s[i])];
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = i + 1; j < s.size(); ++j) score += pairwise(index_of(s[i]), index_of(s[j]));
  return score;
}

struct CrfDistribution {
  std::size_t arity = 0;
  std::vector<double> log_prob;  // indexed like configurations(arity)
  double log_partition = 0.0;
  std::size_t argmax = 0;

  double prob(std::size_t config) const { return std::exp(log_prob[config]); }
  const Configuration& best() const { return configurations(arity)[argmax]; }

  /// marginals[i][s] = P(argument i takes position s).
  std::vector<PositionScores> marginals() const {
    std::vector<PositionScores> m(arity, PositionScores{});
    const auto& configs = configurations(arity);
    for (std::size_t k = 0; k < configs.size(); ++k) {
      const double p = std::exp(log_prob[k]);
      for (std::size_t i = 0; i < arity; ++i) m[i][index_of(configs[k][i])] += p;
    }
    return m;
  }

  /// Expected number of argument pairs per coupling slot.
  std::array<double, PairwiseCoupling::kSize> expected_pair_counts() const {
    std::array<double, PairwiseCoupling::kSize> e{};
    const auto& configs = configurations(arity);
    for (std::size_t k = 0; k < configs.size(); ++k) {
      const double p = std::exp(log_prob[k]);
      for (std::size_t i = 0; i < arity; ++i)
        for (std::size_t j = i + 1; j < arity; ++j)
          e[PairwiseCoupling::slot(index_of(configs[k][i]), index_of(configs[k][j]))] += p;
    }
    return e;
  }
};

inline std::array<double, PairwiseCoupling::kSize> pair_counts(
    std::span<const SyntacticPosition> s) {
  std::array<double, PairwiseCoupling::kSize> c{};
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = i + 1; j < s.size(); ++j)
      c[PairwiseCoupling::slot(index_of(s[i]), index_of(s[j]))] += 1.0;
  return c;
}

/// Exact distribution over all 3^n configurations. Ties in the argmax go to
/// the earliest configuration in canonical order.
inline CrfDistribution crf_enumerate(std::span<const PositionScores> unary,
                                     const PairwiseCoupling& pairwise) {
  const std::size_t n = unary.size();
  const auto& configs = configurations(n);
  CrfDistribution d;
  d.arity = n;
  d.log_prob.resize(configs.size());
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < configs.size(); ++k) {
    d.log_prob[k] = configuration_logscore(unary, configs[k], pairwise);
    if (d.log_prob[k] > best) {
      best = d.log_prob[k];
      d.argmax = k;
    }
  }
  double total = 0.0;
  for (double s : d.log_prob) total += std::exp(s - best);
  d.log_partition = best + std::log(total);
  for (double& s : d.log_prob) s -= d.log_partition;
  return d;
}

}  // namespace protorole
