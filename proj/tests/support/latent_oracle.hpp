#pragma once

// Independent oracles and fixtures shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "protorole/sprolim.hpp"

namespace protorole::oracle {

using enum SyntacticPosition;

// Brute-force oracle: enumerate every (c, z) pair and multiply probabilities
// straight from the generative story, in long double.

inline long double sigmoid(long double x) { return 1.0L / (1.0L + std::exp(-x)); }

inline long double rating_prob(const PropertyRating& r, long double mu, long double eta,
                        const std::array<double, 4>& k) {
  if (!r.applicable) return 1.0L - eta;
  const int l = *r.likelihood;
  const long double hi = l == 5 ? 1.0L : sigmoid(k[l - 1] - mu);
  const long double lo = l == 1 ? 0.0L : sigmoid(k[l - 2] - mu);
  return eta * (hi - lo);
}

inline long double crf_prob(const std::vector<std::size_t>& z, const Configuration& s, const SprolimModel& m) {
  const std::size_t n = z.size();
  auto score = [&](const std::vector<int>& cfg) {
    long double v = 0.0L;
    for (std::size_t t = 0; t < n; ++t) v += m.psi(z[t], cfg[t]);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t u = t + 1; u < n; ++u) v += m.delta()(cfg[t], cfg[u]);
    return v;
  };
  long double zsum = 0.0L;
  std::vector<int> cfg(n, 0);
  for (std::size_t k = 0, total = configurations(n).size(); k < total; ++k) {
    std::size_t rem = k;
    for (std::size_t t = 0; t < n; ++t, rem /= 3) cfg[t] = static_cast<int>(rem % 3);
    zsum += std::exp(score(cfg));
  }
  for (std::size_t t = 0; t < n; ++t) cfg[t] = static_cast<int>(index_of(s[t]));
  return std::exp(score(cfg)) / zsum;
}

// theta_rows[a] / phi are passed explicitly so held-out backoff can be checked.
inline long double brute_force_likelihood(const Clause& clause, const SprolimModel& m,
                                   const std::vector<std::vector<double>>& theta_rows,
                                   const std::vector<double>& phi) {
  const std::size_t n = clause.arity(), R = m.n_roles();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Configuration s;
  for (const auto& t : clause.tokens) s.push_back(t.position);
  long double total = 0.0L;
  std::size_t c = 0;
  do {
    std::vector<std::size_t> z(n, 0);
    for (;;) {
      long double p = phi[c];
      for (std::size_t t = 0; t < n; ++t) {
        p *= theta_rows[perm[t]][z[t]];
        for (std::size_t q = 0; q < m.n_props(); ++q)
          p *= rating_prob(clause.tokens[t].ratings[q], m.mu(z[t], q), m.eta(z[t], q), m.kappa().values());
      }
      total += p * crf_prob(z, s, m);
      std::size_t t = 0;
      while (t < n && ++z[t] == R) z[t++] = 0;
      if (t == n) break;
    }
    ++c;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return total;
}

inline long double brute_force_likelihood(const Clause& clause, const SprolimModel& m) {
  const auto v = *m.verb_index(clause.verb);
  std::vector<std::vector<double>> rows;
  for (std::size_t a = 0; a < clause.arity(); ++a) {
    auto row = m.theta(v, a);
    rows.emplace_back(row.begin(), row.end());
  }
  const auto off = *m.phi_offset(v, clause.arity());
  std::vector<double> phi(m.values().begin() + off, m.values().begin() + off + factorial(clause.arity()));
  return brute_force_likelihood(clause, m, rows, phi);
}


inline Clause make_clause(const std::string& verb, const std::vector<SyntacticPosition>& positions,
                   const std::vector<std::vector<int>>& ratings, const std::string& id = "s") {
  Clause c{id, "0", verb, {}};
  for (std::size_t t = 0; t < positions.size(); ++t) {
    ArgumentToken tok;
    tok.token_id = std::to_string(t);
    tok.position = positions[t];
    for (int l : ratings[t])
      tok.ratings.push_back(l ? PropertyRating::rated(l) : PropertyRating::not_applicable());
    c.tokens.push_back(std::move(tok));
  }
  return c;
}

// Random interior point: rows bounded away from the simplex boundary, E
// away from the box, cutpoints with gaps well above the FD step.
inline void random_interior(SprolimModel& m, Rng& rng) {
  auto v = m.values();
  for (auto [o, len] : m.simplex_rows()) {
    auto d = flat_dirichlet(rng, len);
    for (std::size_t i = 0; i < len; ++i) v[o + i] = 0.5 / len + 0.5 * d[i];
  }
  for (std::size_t r = 0; r < m.n_roles(); ++r) {
    for (std::size_t p = 0; p < m.n_props(); ++p) {
      m.mu(r, p) = uniform(rng, -2, 2);
      m.eta(r, p) = uniform(rng, 0.2, 0.8);
    }
    for (std::size_t s = 0; s < 3; ++s) m.psi(r, s) = uniform(rng, -1.5, 1.5);
  }
  PairwiseCoupling d;
  for (auto& x : d.values()) x = uniform(rng, -2, 2);
  m.set_delta(d);
  m.set_kappa(CutpointVector({uniform(rng, -2.5, -1.5), uniform(rng, -0.8, -0.2), uniform(rng, 0.2, 0.8),
                              uniform(rng, 1.5, 2.5)}));
}

inline std::vector<std::vector<int>> random_ratings(Rng& rng, std::size_t n, std::size_t P) {
  std::vector<std::vector<int>> r(n, std::vector<int>(P));
  for (auto& tok : r)
    for (auto& l : tok) l = static_cast<int>(uniform_index(rng, 6));
  return r;
}

}  // namespace protorole::oracle
