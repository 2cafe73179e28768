#pragma once

// Cumulative link logit hurdle observation model.
//
// A rating l in {1..5} has pmf P(l=j) = q_j - q_{j-1} with q_0 = 0,
// q_5 = 1 and q_j = logistic(kappa_j - mu) for the four stored cutpoints.
// Applicability a ~ Bernoulli(eta) gates the rating: log P(l, a) is
// log eta + log P(l) when a = 1 and log(1 - eta) when a = 0.

#include <array>
#include <cmath>
#include <optional>
#include <span>

#include "protorole/errors.hpp"
#include "protorole/optim.hpp"

namespace protorole {

inline constexpr int kNumRatings = 5;
inline constexpr std::size_t kNumCutpoints = kNumRatings - 1;
inline constexpr double kEtaFloor = 1e-6;

using RatingPmf = std::array<double, kNumRatings>;

/// Four nondecreasing cutpoints.
class CutpointVector {
 public:
  CutpointVector() : k_{-1.5, -0.5, 0.5, 1.5} {}
  explicit CutpointVector(const std::array<double, kNumCutpoints>& k) : k_(k) {
    for (std::size_t m = 0; m + 1 < kNumCutpoints; ++m)
      if (!(k_[m] <= k_[m + 1])) throw ContractViolation("cutpoints must be nondecreasing");
  }

  double operator[](std::size_t m) const { return k_[m]; }
  const std::array<double, kNumCutpoints>& values() const { return k_; }

  friend bool operator==(const CutpointVector&, const CutpointVector&) = default;

 private:
  std::array<double, kNumCutpoints> k_;
};

struct HurdleCell {
  double mu = 0.0;
  double eta = 0.5;
};

inline double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Logistic density sigma(x)(1 - sigma(x)).
inline double logistic_density(double x) {
  const double s = logistic(x);
  return s * logistic(-x);
}

namespace detail {

// sigma(b) - sigma(a) for b >= a, taking the difference on whichever side
// of 1/2 keeps both terms small.
inline double logistic_gap(double a, double b) {
  if (a + b > 0) return logistic(-a) - logistic(-b);
  return logistic(b) - logistic(a);
}

// Probability of category j (1-based) with +-infinity outer cutpoints.
inline double category_prob(int j, double mu, const CutpointVector& kappa) {
  if (j == 1) return logistic(kappa[0] - mu);
  if (j == kNumRatings) return logistic(mu - kappa[kNumCutpoints - 1]);
  return logistic_gap(kappa[j - 2] - mu, kappa[j - 1] - mu);
}

}  // namespace detail

inline RatingPmf ordinal_pmf(double mu, const CutpointVector& kappa) {
  RatingPmf p{};
  for (int j = 1; j <= kNumRatings; ++j) p[j - 1] = detail::category_prob(j, mu, kappa);
  return p;
}

inline RatingPmf ordinal_pmf(double mu, const std::array<double, kNumCutpoints>& kappa) {
  return ordinal_pmf(mu, CutpointVector(kappa));
}

inline double ordinal_logprob(int l, double mu, const CutpointVector& kappa) {
  if (l < 1 || l > kNumRatings) throw ContractViolation("rating outside 1..5");
  return std::log(detail::category_prob(l, mu, kappa));
}

inline double hurdle_joint_logprob(std::optional<int> l, bool applicable, const HurdleCell& cell,
                                   const CutpointVector& kappa) {
  if (!applicable) return std::log1p(-cell.eta);
  if (!l) throw ContractViolation("applicable rating without a likelihood");
  return std::log(cell.eta) + ordinal_logprob(*l, cell.mu, kappa);
}

struct HurdleGrad {
  double d_mu = 0.0;
  double d_eta = 0.0;
  std::array<double, kNumCutpoints> d_kappa{};
};

/// Exact partial derivatives of hurdle_joint_logprob.
inline HurdleGrad hurdle_grad(std::optional<int> l, bool applicable, const HurdleCell& cell,
                              const CutpointVector& kappa) {
  HurdleGrad g;
  if (!applicable) {
    g.d_eta = -1.0 / (1.0 - cell.eta);
    return g;
  }
  if (!l || *l < 1 || *l > kNumRatings) throw ContractViolation("applicable rating needs l in 1..5");
  const int j = *l;
  g.d_eta = 1.0 / cell.eta;
  const double p = detail::category_prob(j, cell.mu, kappa);
  // P(l=j) = F(kappa_j - mu) - F(kappa_{j-1} - mu); upper/lower terms vanish
  // at the open ends.
  if (j < kNumRatings) {
    const double f = logistic_density(kappa[j - 1] - cell.mu);
    g.d_kappa[j - 1] += f / p;
    g.d_mu -= f / p;
  }
  if (j > 1) {
    const double f = logistic_density(kappa[j - 2] - cell.mu);
    g.d_kappa[j - 2] -= f / p;
    g.d_mu += f / p;
  }
  return g;
}

/// Euclidean projection onto cutpoints with kappa_{m+1} - kappa_m >= min_gap.
/// With min_gap = 0 this is plain isotonic regression.
inline CutpointVector project_cutpoints(const std::array<double, kNumCutpoints>& raw,
                                        double min_gap = 0.0) {
  std::array<double, kNumCutpoints> shifted;
  for (std::size_t m = 0; m < kNumCutpoints; ++m) shifted[m] = raw[m] - min_gap * m;
  auto iso = isotonic_projection(shifted);
  std::array<double, kNumCutpoints> out;
  for (std::size_t m = 0; m < kNumCutpoints; ++m) out[m] = iso[m] + min_gap * m;
  return CutpointVector(out);
}

}  // namespace protorole
