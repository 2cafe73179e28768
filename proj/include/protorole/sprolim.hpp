#pragma once

// Semantic proto-role linking model.
//
// Each verb v has |A_v| argument types (the largest arity seen for v), each
// carrying a mixture Theta over latent roles. A clause of arity n aligns its
// tokens with the first n argument types through a permutation c drawn from
// Phi_{v,n}; token t then takes role z_t ~ Theta_{v,c(t)}. Roles emit
// hurdle-ordinal property ratings (M, E, shared kappa) and, through the
// linking CRF (Psi role->position unaries, Delta position-pair couplings),
// the clause's syntactic positions.
//
// The clause likelihood sums c and z out exactly:
//   L = sum_z A(z) exp(B(z)),
//   A(z) = sum_c Phi(c) prod_t Theta_{c(t)}(z_t),
//   B(z) = sum_t emission(t, z_t) + log P_crf(s | z).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <tuple>
#include <cstdio>
#include <array>
#include <ostream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "protorole/corpus.hpp"
#include "protorole/crf.hpp"
#include "protorole/errors.hpp"
#include "protorole/optim.hpp"
#include "protorole/ordlogit.hpp"
#include "protorole/parallel.hpp"
#include "protorole/rng.hpp"

namespace protorole {

using Permutation = std::vector<std::uint8_t>;  // token t -> argument type perm[t]

inline std::size_t factorial(std::size_t n) {
  std::size_t f = 1;
  for (std::size_t i = 2; i <= n; ++i) f *= i;
  return f;
}

/// All n! permutations in lexicographic order.
inline const std::vector<Permutation>& enumerate_permutations(std::size_t n,
                                                              std::size_t arity_cap = 4) {
  if (n > arity_cap || n > kMaxEnumeratedArity)
    throw ConfigError("arity " + std::to_string(n) + " exceeds cap " + std::to_string(arity_cap));
  static const auto tables = [] {
    std::array<std::vector<Permutation>, kMaxEnumeratedArity + 1> t;
    for (std::size_t m = 0; m <= kMaxEnumeratedArity; ++m) {
      Permutation p(m);
      std::iota(p.begin(), p.end(), std::uint8_t{0});
      do t[m].push_back(p);
      while (std::next_permutation(p.begin(), p.end()));
    }
    return t;
  }();
  return tables[n];
}

struct SprolimConfig {
  std::size_t n_roles = 2;
  std::size_t arity_cap = 4;
  double learning_rate = 0.1;
  double adagrad_eps = 1e-8;
  std::size_t max_epochs = 1000;
  double tol = 1e-6;  // relative objective change
  std::uint64_t seed = 0;
  std::size_t restarts = 3;
  std::size_t max_roles = 10;
  std::size_t min_phi_count = 2;  // (verb, arity) pairs seen less often share a backoff Phi
  double cutpoint_gap = 1e-4;
  unsigned jobs = 1;
};

enum class ScoringMode { Training, HeldOut };

/// Parameter bundle (Theta, Phi, M, E, Psi, Delta, kappa) stored as one flat
/// vector, plus the verb/argument-type structure that lays it out.
class SprolimModel {
 public:
  struct Verb {
    std::string name;
    std::size_t n_types = 0;
    std::size_t theta_offset = 0;
    std::map<std::size_t, std::size_t> phi_offset;  // arity -> offset (own Phi only)
  };

  SprolimModel() = default;

  /// Lays out parameters for `verbs`, given as (name, |A_v|, arities with
  /// their own Phi). Arities in `backoff_arities` get a shared Phi.
  SprolimModel(std::size_t n_roles, std::vector<std::string> properties, std::size_t arity_cap,
               const std::vector<std::tuple<std::string, std::size_t, std::vector<std::size_t>>>& verbs,
               const std::vector<std::size_t>& backoff_arities)
      : n_roles_(n_roles), properties_(std::move(properties)), arity_cap_(arity_cap) {
    if (n_roles_ == 0) throw ConfigError("n_roles must be at least 1");
    std::size_t off = 0;
    for (const auto& [name, n_types, arities] : verbs) {
      if (n_types > arity_cap_) throw ConfigError("verb " + name + " exceeds the arity cap");
      Verb v{name, n_types, off, {}};
      for (std::size_t a = 0; a < n_types; ++a) simplex_.push_back({off + a * n_roles_, n_roles_});
      off += n_types * n_roles_;
      for (auto n : arities) {
        if (n == 0 || n > n_types) throw ConfigError("Phi arity outside 1..|A_v| for " + name);
        v.phi_offset[n] = off;
        simplex_.push_back({off, factorial(n)});
        off += factorial(n);
      }
      if (!lookup_.emplace(name, verbs_.size()).second) throw ConfigError("duplicate verb " + name);
      verbs_.push_back(std::move(v));
    }
    for (auto n : backoff_arities) {
      if (n == 0 || n > arity_cap_) throw ConfigError("backoff Phi arity outside 1..cap");
      backoff_phi_[n] = off;
      simplex_.push_back({off, factorial(n)});
      off += factorial(n);
    }
    const std::size_t rp = n_roles_ * properties_.size();
    m_off_ = off;
    e_off_ = m_off_ + rp;
    psi_off_ = e_off_ + rp;
    delta_off_ = psi_off_ + n_roles_ * kNumPositions;
    kappa_off_ = delta_off_ + PairwiseCoupling::kSize;
    values_.assign(kappa_off_ + kNumCutpoints, 0.0);
    for (auto [o, len] : simplex_)
      for (std::size_t i = 0; i < len; ++i) values_[o + i] = 1.0 / static_cast<double>(len);
    for (std::size_t i = 0; i < rp; ++i) values_[e_off_ + i] = 0.5;
    const auto k0 = CutpointVector().values();
    std::copy(k0.begin(), k0.end(), values_.begin() + kappa_off_);
  }

  /// Structure implied by a training corpus: |A_v| = max arity of v, own Phi
  /// for (v, n) seen at least `min_phi_count` times, backoff Phi otherwise.
  static SprolimModel for_corpus(const Corpus& corpus, std::size_t n_roles, std::size_t arity_cap,
                                 std::size_t min_phi_count = 2) {
    std::map<std::string, std::map<std::size_t, std::size_t>> counts;
    for (const auto& c : corpus.clauses) {
      if (c.arity() == 0) throw ConfigError("clause " + c.clause_id() + " has no arguments");
      if (c.arity() > arity_cap)
        throw ConfigError("clause " + c.clause_id() + " exceeds the arity cap");
      ++counts[c.verb][c.arity()];
    }
    std::vector<std::tuple<std::string, std::size_t, std::vector<std::size_t>>> verbs;
    std::set<std::size_t> backoff;
    for (const auto& [verb, by_arity] : counts) {
      std::vector<std::size_t> own;
      for (const auto& [n, k] : by_arity) {
        if (k >= min_phi_count) own.push_back(n);
        else backoff.insert(n);
      }
      verbs.emplace_back(verb, by_arity.rbegin()->first, own);
    }
    return SprolimModel(n_roles, corpus.properties, arity_cap, verbs, {backoff.begin(), backoff.end()});
  }

  std::size_t n_roles() const { return n_roles_; }
  std::size_t n_props() const { return properties_.size(); }
  std::size_t arity_cap() const { return arity_cap_; }
  const std::vector<std::string>& properties() const { return properties_; }
  const std::vector<Verb>& verbs() const { return verbs_; }
  const std::map<std::size_t, std::size_t>& backoff_phi_offsets() const { return backoff_phi_; }

  std::optional<std::size_t> verb_index(const std::string& verb) const {
    auto it = lookup_.find(verb);
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  /// (offset, length) of every Theta and Phi row.
  const std::vector<std::pair<std::size_t, std::size_t>>& simplex_rows() const { return simplex_; }

  std::span<const double> theta(std::size_t v, std::size_t type) const {
    return {values_.data() + theta_offset(v, type), n_roles_};
  }
  std::span<double> theta(std::size_t v, std::size_t type) {
    return {values_.data() + theta_offset(v, type), n_roles_};
  }
  std::size_t theta_offset(std::size_t v, std::size_t type) const {
    return verbs_[v].theta_offset + type * n_roles_;
  }

  /// Offset of the Phi row used for (v, n): own if present, else backoff.
  std::optional<std::size_t> phi_offset(std::size_t v, std::size_t n) const {
    const auto& own = verbs_[v].phi_offset;
    if (auto it = own.find(n); it != own.end()) return it->second;
    if (auto it = backoff_phi_.find(n); it != backoff_phi_.end()) return it->second;
    return std::nullopt;
  }

  std::size_t mu_index(std::size_t r, std::size_t p) const { return m_off_ + r * n_props() + p; }
  std::size_t eta_index(std::size_t r, std::size_t p) const { return e_off_ + r * n_props() + p; }
  std::size_t psi_index(std::size_t r, std::size_t s) const { return psi_off_ + r * kNumPositions + s; }
  std::size_t delta_index(std::size_t slot) const { return delta_off_ + slot; }
  std::size_t kappa_index(std::size_t m) const { return kappa_off_ + m; }

  double mu(std::size_t r, std::size_t p) const { return values_[mu_index(r, p)]; }
  double& mu(std::size_t r, std::size_t p) { return values_[mu_index(r, p)]; }
  double eta(std::size_t r, std::size_t p) const { return values_[eta_index(r, p)]; }
  double& eta(std::size_t r, std::size_t p) { return values_[eta_index(r, p)]; }
  double psi(std::size_t r, std::size_t s) const { return values_[psi_index(r, s)]; }
  double& psi(std::size_t r, std::size_t s) { return values_[psi_index(r, s)]; }

  PairwiseCoupling delta() const {
    PairwiseCoupling d;
    std::copy_n(values_.begin() + delta_off_, PairwiseCoupling::kSize, d.values().begin());
    return d;
  }
  void set_delta(const PairwiseCoupling& d) {
    std::copy(d.values().begin(), d.values().end(), values_.begin() + delta_off_);
  }

  CutpointVector kappa() const {
    std::array<double, kNumCutpoints> k;
    std::copy_n(values_.begin() + kappa_off_, kNumCutpoints, k.begin());
    return CutpointVector(k);
  }
  void set_kappa(const CutpointVector& k) {
    std::copy(k.values().begin(), k.values().end(), values_.begin() + kappa_off_);
  }

  /// Projects every block back onto its feasible set: simplex rows, box-
  /// clamped E, cutpoints with a minimum gap.
  void project(double cutpoint_gap = 0.0) {
    for (auto [o, len] : simplex_) project_simplex_inplace({values_.data() + o, len});
    for (std::size_t i = e_off_; i < psi_off_; ++i) values_[i] = clamp_open_unit(values_[i], kEtaFloor);
    std::array<double, kNumCutpoints> raw;
    std::copy_n(values_.begin() + kappa_off_, kNumCutpoints, raw.begin());
    set_kappa(project_cutpoints(raw, cutpoint_gap));
  }

  /// Free-parameter count for AIC: one degree of freedom lost per simplex
  /// row, all other slots free.
  std::size_t num_free_parameters() const {
    std::size_t k = 0;
    for (const auto& v : verbs_) {
      k += v.n_types * (n_roles_ - 1);
      for (const auto& [n, off] : v.phi_offset) k += factorial(n) - 1;
    }
    for (const auto& [n, off] : backoff_phi_) k += factorial(n) - 1;
    k += 2 * n_roles_ * n_props() + kNumPositions * n_roles_ + PairwiseCoupling::kSize + kNumCutpoints;
    return k;
  }

 private:
  std::size_t n_roles_ = 0;
  std::vector<std::string> properties_;
  std::size_t arity_cap_ = 4;
  std::vector<Verb> verbs_;
  std::map<std::string, std::size_t> lookup_;
  std::map<std::size_t, std::size_t> backoff_phi_;
  std::vector<std::pair<std::size_t, std::size_t>> simplex_;
  std::size_t m_off_ = 0, e_off_ = 0, psi_off_ = 0, delta_off_ = 0, kappa_off_ = 0;
  std::vector<double> values_;
};

inline double aic(double loglik, std::size_t n_params) {
  if (n_params < 1) throw ContractViolation("aic: n_params must be at least 1");
  return 2.0 * static_cast<double>(n_params) - 2.0 * loglik;
}

/// log P(ratings, positions | clause verb) with roles and canonicalization
/// summed out. When `grad` is given (training mode only) the gradient of the
/// returned value is accumulated into it in the model's flat layout.
inline double clause_loglik(const Clause& clause, const SprolimModel& model,
                            ScoringMode mode = ScoringMode::Training,
                            std::vector<double>* grad = nullptr) {
  const std::size_t n = clause.arity();
  const std::size_t R = model.n_roles();
  const std::size_t P = model.n_props();
  if (n == 0) throw ContractViolation("clause " + clause.clause_id() + " has no arguments");
  if (n > model.arity_cap())
    throw ConfigError("clause " + clause.clause_id() + " exceeds the arity cap");
  const auto& perms = enumerate_permutations(n, model.arity_cap());

  // Resolve Theta rows (one per argument type in the prefix) and the Phi row.
  const auto values = model.values();
  std::vector<double> uniform_theta(R, 1.0 / static_cast<double>(R));
  std::vector<double> uniform_phi(perms.size(), 1.0 / static_cast<double>(perms.size()));
  std::vector<const double*> theta_rows(n, uniform_theta.data());
  std::vector<std::optional<std::size_t>> theta_offsets(n);
  const double* phi = uniform_phi.data();
  std::optional<std::size_t> phi_off;
  auto v = model.verb_index(clause.verb);
  if (v && n <= model.verbs()[*v].n_types) {
    for (std::size_t a = 0; a < n; ++a) {
      theta_offsets[a] = model.theta_offset(*v, a);
      theta_rows[a] = values.data() + *theta_offsets[a];
    }
    phi_off = model.phi_offset(*v, n);
    if (phi_off) phi = values.data() + *phi_off;
  }
  if (mode == ScoringMode::Training && (!v || !phi_off || n > model.verbs()[*v].n_types))
    throw ConfigError("verb '" + clause.verb + "' (arity " + std::to_string(n) +
                      ") is not covered by the model");
  if (grad && mode != ScoringMode::Training)
    throw ContractViolation("gradients are only defined in training mode");

  const CutpointVector kappa = model.kappa();
  for (const auto& t : clause.tokens)
    if (t.ratings.size() != P) throw ContractViolation("rating count does not match the model");

  // emission[t * R + r] = sum_p log P(l_tp, a_tp | role r)
  std::vector<double> emission(n * R, 0.0);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t r = 0; r < R; ++r) {
      double e = 0.0;
      for (std::size_t p = 0; p < P; ++p) {
        const auto& rt = clause.tokens[t].ratings[p];
        e += hurdle_joint_logprob(rt.likelihood, rt.applicable, {model.mu(r, p), model.eta(r, p)},
                                  kappa);
      }
      emission[t * R + r] = e;
    }

  Configuration observed(n);
  for (std::size_t t = 0; t < n; ++t) observed[t] = clause.tokens[t].position;
  const std::size_t observed_idx = configuration_index(observed);
  const PairwiseCoupling delta = model.delta();

  std::size_t nz = 1;
  for (std::size_t t = 0; t < n; ++t) nz *= R;
  std::vector<double> B(nz), A(nz);
  std::vector<std::size_t> z(n);
  std::vector<PositionScores> unary(n);
  auto decode = [&](std::size_t zi) {
    for (std::size_t t = n; t-- > 0;) {
      z[t] = zi % R;
      zi /= R;
    }
  };
  // Crf distributions are kept only when gradients are requested.
  std::vector<CrfDistribution> crf;
  if (grad) crf.reserve(nz);
  for (std::size_t zi = 0; zi < nz; ++zi) {
    decode(zi);
    double b = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      b += emission[t * R + z[t]];
      for (std::size_t s = 0; s < kNumPositions; ++s) unary[t][s] = model.psi(z[t], s);
    }
    auto dist = crf_enumerate(unary, delta);
    b += dist.log_prob[observed_idx];
    B[zi] = b;
    double a = 0.0;
    for (std::size_t c = 0; c < perms.size(); ++c) {
      double w = phi[c];
      for (std::size_t t = 0; t < n && w != 0.0; ++t) w *= theta_rows[perms[c][t]][z[t]];
      a += w;
    }
    A[zi] = a;
    if (grad) crf.push_back(std::move(dist));
  }
  double max_b = -std::numeric_limits<double>::infinity();
  for (std::size_t zi = 0; zi < nz; ++zi)
    if (A[zi] > 0.0) max_b = std::max(max_b, B[zi]);
  if (!std::isfinite(max_b)) return -std::numeric_limits<double>::infinity();
  std::vector<double> w(nz);
  double S = 0.0;
  for (std::size_t zi = 0; zi < nz; ++zi) S += A[zi] * (w[zi] = std::exp(B[zi] - max_b));
  const double loglik = max_b + std::log(S);
  if (!grad || !(S > 0.0)) return loglik;

  auto& g = *grad;
  for (auto& x : w) x /= S;  // w(z) = exp(B(z)) / L

  // Phi and Theta.
  std::vector<double> gamma(n * R, 0.0);  // posterior role marginals
  for (std::size_t zi = 0; zi < nz; ++zi) {
    decode(zi);
    const double pz = A[zi] * w[zi];
    for (std::size_t t = 0; t < n; ++t) gamma[t * R + z[t]] += pz;
    for (std::size_t c = 0; c < perms.size(); ++c) {
      const auto& perm = perms[c];
      double prod = 1.0;
      for (std::size_t t = 0; t < n; ++t) prod *= theta_rows[perm[t]][z[t]];
      if (phi_off) g[*phi_off + c] += w[zi] * prod;
      for (std::size_t t = 0; t < n; ++t) {
        const auto& off = theta_offsets[perm[t]];
        if (!off) continue;
        double others = phi[c];
        for (std::size_t u = 0; u < n; ++u)
          if (u != t) others *= theta_rows[perm[u]][z[u]];
        g[*off + z[t]] += w[zi] * others;
      }
    }
    // CRF: d log P(s|z) = observed features - expected features.
    if (pz == 0.0) continue;
    const auto marg = crf[zi].marginals();
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t s = 0; s < kNumPositions; ++s)
        g[model.psi_index(z[t], s)] +=
            pz * ((index_of(observed[t]) == s ? 1.0 : 0.0) - marg[t][s]);
    const auto expected = crf[zi].expected_pair_counts();
    const auto seen = pair_counts(observed);
    for (std::size_t q = 0; q < PairwiseCoupling::kSize; ++q)
      g[model.delta_index(q)] += pz * (seen[q] - expected[q]);
  }

  // Emissions weighted by posterior role marginals.
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t r = 0; r < R; ++r) {
      const double gr = gamma[t * R + r];
      if (gr == 0.0) continue;
      for (std::size_t p = 0; p < P; ++p) {
        const auto& rt = clause.tokens[t].ratings[p];
        auto hg = hurdle_grad(rt.likelihood, rt.applicable, {model.mu(r, p), model.eta(r, p)}, kappa);
        g[model.mu_index(r, p)] += gr * hg.d_mu;
        g[model.eta_index(r, p)] += gr * hg.d_eta;
        for (std::size_t m = 0; m < kNumCutpoints; ++m) g[model.kappa_index(m)] += gr * hg.d_kappa[m];
      }
    }
  return loglik;
}

namespace detail {

inline constexpr std::size_t kClauseBlock = 64;

struct LoglikPartial {
  double value = 0.0;
  std::vector<double> grad;
  std::optional<std::string> bad_clause;
};

}  // namespace detail

/// Sum of clause log-likelihoods in clause order. Throws NumericalError
/// naming the first clause whose likelihood is non-finite.
inline double corpus_loglik(const Corpus& corpus, const SprolimModel& model,
                            ScoringMode mode = ScoringMode::Training,
                            std::vector<double>* grad = nullptr, unsigned jobs = 1) {
  const std::size_t n = corpus.clauses.size();
  const std::size_t nblocks = (n + detail::kClauseBlock - 1) / detail::kClauseBlock;
  auto parts = parallel_map(nblocks, jobs, [&](std::size_t b) {
    detail::LoglikPartial part;
    if (grad) part.grad.assign(model.size(), 0.0);
    for (std::size_t i = b * detail::kClauseBlock; i < std::min(n, (b + 1) * detail::kClauseBlock); ++i) {
      const double ll = clause_loglik(corpus.clauses[i], model, mode, grad ? &part.grad : nullptr);
      if (!std::isfinite(ll) && !part.bad_clause) part.bad_clause = corpus.clauses[i].clause_id();
      part.value += ll;
    }
    return part;
  });
  double total = 0.0;
  if (grad) grad->assign(model.size(), 0.0);
  for (const auto& part : parts) {
    if (part.bad_clause) throw NumericalError("non-finite clause log-likelihood", 0, *part.bad_clause);
    total += part.value;
    if (grad)
      for (std::size_t i = 0; i < part.grad.size(); ++i) (*grad)[i] += part.grad[i];
  }
  return total;
}

struct SprolimFit {
  SprolimModel model;
  std::vector<double> objective;  // per epoch, index 0 = initialization
  std::size_t epochs = 0;
  bool converged = false;
  std::uint64_t seed = 0;
  double loglik = 0.0;
  std::size_t n_params = 0;
  double aic_value = 0.0;
};

/// Random initialization: M ~ U(-0.5, 0.5), E = 0.5 + U(-0.05, 0.05),
/// Psi = Delta = 0, Theta/Phi rows = 0.8 uniform + 0.2 Dirichlet(1).
inline void randomize(SprolimModel& model, Rng& rng) {
  auto v = model.values();
  for (auto [o, len] : model.simplex_rows()) {
    auto jitter = flat_dirichlet(rng, len);
    for (std::size_t i = 0; i < len; ++i) v[o + i] = 0.8 / static_cast<double>(len) + 0.2 * jitter[i];
  }
  for (std::size_t r = 0; r < model.n_roles(); ++r)
    for (std::size_t p = 0; p < model.n_props(); ++p) {
      model.mu(r, p) = uniform(rng, -0.5, 0.5);
      model.eta(r, p) = 0.5 + uniform(rng, -0.05, 0.05);
    }
  for (std::size_t r = 0; r < model.n_roles(); ++r)
    for (std::size_t s = 0; s < kNumPositions; ++s) model.psi(r, s) = 0.0;
  model.set_delta(PairwiseCoupling{});
  model.set_kappa(CutpointVector());
}

/// Maximum-likelihood fit by projected AdaGrad ascent on corpus_loglik.
inline SprolimFit fit(const Corpus& corpus, const SprolimConfig& config) {
  if (corpus.clauses.empty()) throw ConfigError("fit: empty corpus");
  SprolimFit out;
  out.seed = config.seed;
  out.model = SprolimModel::for_corpus(corpus, config.n_roles, config.arity_cap, config.min_phi_count);
  Rng rng(config.seed);
  randomize(out.model, rng);
  out.model.project(config.cutpoint_gap);

  auto& model = out.model;
  AdaGrad adagrad(model.size(), config.learning_rate, config.adagrad_eps);
  std::vector<double> grad;
  auto evaluate = [&](std::size_t epoch) {
    try {
      return corpus_loglik(corpus, model, ScoringMode::Training, &grad, config.jobs);
    } catch (const NumericalError& e) {
      throw NumericalError("non-finite objective at epoch " + std::to_string(epoch) +
                               " (clause " + e.clause_id() + ")",
                           epoch, e.clause_id());
    }
  };
  double value = evaluate(0);
  out.objective.push_back(value);
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    for (double gi : grad)
      if (!std::isfinite(gi)) throw NumericalError("non-finite gradient at epoch " + std::to_string(epoch), epoch, "");
    adagrad.ascend(model.values(), grad);
    model.project(config.cutpoint_gap);
    const double next = evaluate(epoch);
    out.objective.push_back(next);
    out.epochs = epoch;
    const double rel = std::abs(next - value) / std::max(std::abs(value), 1e-12);
    value = next;
    if (rel < config.tol) {
      out.converged = true;
      break;
    }
  }
  out.loglik = value;
  out.n_params = model.num_free_parameters();
  out.aic_value = aic(out.loglik, out.n_params);
  return out;
}

/// Best of `config.restarts` fits with seeds derived from config.seed.
inline SprolimFit fit_with_restarts(const Corpus& corpus, const SprolimConfig& config) {
  std::optional<SprolimFit> best;
  for (std::size_t k = 0; k < std::max<std::size_t>(config.restarts, 1); ++k) {
    SprolimConfig c = config;
    c.seed = derive_seed(config.seed, config.n_roles * 1000 + k);
    auto f = fit(corpus, c);
    if (!best || f.loglik > best->loglik) best = std::move(f);
  }
  return std::move(*best);
}

struct RoleSelection {
  std::vector<SprolimFit> fits;  // fits[i] has i + 1 roles
  std::size_t selected_roles = 0;

  const SprolimFit& selected() const { return fits.at(selected_roles - 1); }
};

/// Fits |R| = 1, 2, ... and stops at the first |R| whose successor has a
/// larger AIC.
inline RoleSelection select_roles(const Corpus& corpus, const SprolimConfig& config) {
  RoleSelection sel;
  for (std::size_t r = 1; r <= config.max_roles; ++r) {
    SprolimConfig c = config;
    c.n_roles = r;
    sel.fits.push_back(fit_with_restarts(corpus, c));
    if (r > 1 && sel.fits[r - 1].aic_value > sel.fits[r - 2].aic_value) {
      sel.selected_roles = r - 1;
      return sel;
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < sel.fits.size(); ++i)
    if (sel.fits[i].aic_value < sel.fits[best].aic_value) best = i;
  sel.selected_roles = best + 1;
  return sel;
}

// ---------------------------------------------------------------------------
// Forward sampling

struct GenerateReport {
  std::size_t requested = 0;
  std::size_t skipped = 0;  // rejection cap exceeded
};

inline constexpr const char* kLatentScheme = "latent";

/// Samples a corpus from the generative story. Each clause picks a verb
/// uniformly and an arity from `arity_probs` (index 0 = arity 1) restricted
/// to the verb's argument types. Sampled roles are recorded under the
/// "latent" role scheme as "r<index>".
inline Corpus generate(const SprolimModel& model, std::size_t n_clauses,
                       std::span<const double> arity_probs, std::uint64_t seed,
                       GenerateReport* report = nullptr) {
  if (model.verbs().empty()) throw ConfigError("generate: model has no verbs");
  if (arity_probs.empty()) throw ConfigError("generate: empty arity distribution");
  Rng rng(seed);
  Corpus corpus;
  corpus.properties = model.properties();
  corpus.role_schemes = {kLatentScheme};
  const CutpointVector kappa = model.kappa();
  const PairwiseCoupling delta = model.delta();
  const auto values = model.values();
  GenerateReport rep;
  rep.requested = n_clauses;
  for (std::size_t i = 0; i < n_clauses; ++i) {
    const std::size_t v = uniform_index(rng, model.verbs().size());
    const auto& verb = model.verbs()[v];
    std::vector<double> ap(std::min(arity_probs.size(), verb.n_types));
    std::copy_n(arity_probs.begin(), ap.size(), ap.begin());
    if (std::accumulate(ap.begin(), ap.end(), 0.0) <= 0.0) ap.assign(ap.size(), 1.0);
    const std::size_t n = sample_categorical(rng, ap) + 1;
    const auto& perms = enumerate_permutations(n, model.arity_cap());
    std::vector<double> phi(perms.size(), 1.0 / static_cast<double>(perms.size()));
    if (auto off = model.phi_offset(v, n)) std::copy_n(values.begin() + *off, perms.size(), phi.begin());
    const auto& perm = perms[sample_categorical(rng, phi)];

    Clause clause{"s" + std::to_string(i), "0", verb.name, {}};
    std::vector<PositionScores> unary(n);
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t role = sample_categorical(rng, model.theta(v, perm[t]));
      ArgumentToken tok;
      tok.token_id = std::to_string(t);
      tok.categorical_roles[kLatentScheme] = "r" + std::to_string(role);
      for (std::size_t p = 0; p < model.n_props(); ++p) {
        if (bernoulli(rng, model.eta(role, p))) {
          auto pmf = ordinal_pmf(model.mu(role, p), kappa);
          tok.ratings.push_back(PropertyRating::rated(static_cast<int>(sample_categorical(rng, pmf)) + 1));
        } else {
          tok.ratings.push_back(PropertyRating::not_applicable());
        }
      }
      for (std::size_t s = 0; s < kNumPositions; ++s) unary[t][s] = model.psi(role, s);
      clause.tokens.push_back(std::move(tok));
    }
    auto dist = crf_enumerate(unary, delta);
    std::vector<double> probs(dist.log_prob.size());
    for (std::size_t k = 0; k < probs.size(); ++k) probs[k] = std::exp(dist.log_prob[k]);
    bool accepted = false;
    for (int attempt = 0; attempt < 100 && !accepted; ++attempt) {
      const auto& config = configurations(n)[sample_categorical(rng, probs)];
      if (std::count(config.begin(), config.end(), SyntacticPosition::Subject) > 1) continue;
      for (std::size_t t = 0; t < n; ++t) clause.tokens[t].position = config[t];
      accepted = true;
    }
    if (!accepted) {
      ++rep.skipped;
      continue;
    }
    corpus.clauses.push_back(std::move(clause));
  }
  if (report) *report = rep;
  if (rep.skipped * 10 > n_clauses)
    throw ConfigError("generate: rejection cap exceeded for " + std::to_string(rep.skipped) + " of " +
                      std::to_string(n_clauses) + " clauses");
  corpus.rebuild_index();
  return corpus;
}

/// Knobs for building a random ground-truth model.
struct SyntheticSpec {
  std::size_t n_roles = 2;
  std::size_t n_props = 6;
  std::size_t n_verbs = 50;
  std::size_t max_types = 3;  // |A_v| drawn uniformly from 1..max_types
  std::size_t arity_cap = 4;
  double centroid_range = 2.5;  // M entries ~ U(-range, range)
  double min_separation = 3.0;  // pairwise sup-norm distance between M rows
  double theta_purity = 0.9;    // mass on each argument type's dominant role
  double psi_scale = 2.0;
  std::optional<PairwiseCoupling> delta;
  std::uint64_t seed = 0;
};

inline PairwiseCoupling default_synthetic_delta() {
  PairwiseCoupling d;
  using enum SyntacticPosition;
  d.set(index_of(Subject), index_of(Subject), -4.0);
  d.set(index_of(Subject), index_of(Object), 2.0);
  d.set(index_of(Subject), index_of(Oblique), 1.0);
  d.set(index_of(Object), index_of(Object), -1.0);
  d.set(index_of(Object), index_of(Oblique), 0.5);
  d.set(index_of(Oblique), index_of(Oblique), -1.0);
  return d;
}

inline SprolimModel synthetic_model(const SyntheticSpec& spec) {
  Rng rng(spec.seed);
  std::vector<std::string> props;
  for (std::size_t p = 0; p < spec.n_props; ++p) props.push_back("p" + std::to_string(p));
  std::vector<std::tuple<std::string, std::size_t, std::vector<std::size_t>>> verbs;
  const std::size_t width = std::to_string(spec.n_verbs).size();
  for (std::size_t i = 0; i < spec.n_verbs; ++i) {
    std::string name = std::to_string(i);
    name = "v" + std::string(width - name.size(), '0') + name;
    const std::size_t types = 1 + uniform_index(rng, std::min(spec.max_types, spec.arity_cap));
    std::vector<std::size_t> arities(types);
    std::iota(arities.begin(), arities.end(), std::size_t{1});
    verbs.emplace_back(name, types, arities);
  }
  SprolimModel model(spec.n_roles, props, spec.arity_cap, verbs, {});
  for (std::size_t v = 0; v < model.verbs().size(); ++v) {
    for (std::size_t a = 0; a < model.verbs()[v].n_types; ++a) {
      auto row = model.theta(v, a);
      const std::size_t dominant = uniform_index(rng, spec.n_roles);
      for (std::size_t r = 0; r < spec.n_roles; ++r)
        row[r] = spec.n_roles == 1 ? 1.0
                 : r == dominant   ? spec.theta_purity
                                   : (1.0 - spec.theta_purity) / static_cast<double>(spec.n_roles - 1);
    }
    for (const auto& [n, off] : model.verbs()[v].phi_offset) {
      auto d = flat_dirichlet(rng, factorial(n));
      std::copy(d.begin(), d.end(), model.values().begin() + off);
    }
  }
  for (int attempt = 0;; ++attempt) {
    for (std::size_t r = 0; r < spec.n_roles; ++r)
      for (std::size_t p = 0; p < spec.n_props; ++p)
        model.mu(r, p) = uniform(rng, -spec.centroid_range, spec.centroid_range);
    bool separated = true;
    for (std::size_t r = 0; r < spec.n_roles && separated; ++r)
      for (std::size_t q = r + 1; q < spec.n_roles && separated; ++q) {
        double d = 0.0;
        for (std::size_t p = 0; p < spec.n_props; ++p) d = std::max(d, std::abs(model.mu(r, p) - model.mu(q, p)));
        separated = d >= spec.min_separation;
      }
    if (separated) break;
    if (attempt > 10000) throw ConfigError("synthetic_model: cannot separate centroids");
  }
  for (std::size_t r = 0; r < spec.n_roles; ++r) {
    for (std::size_t p = 0; p < spec.n_props; ++p) model.eta(r, p) = uniform(rng, 0.3, 0.95);
    for (std::size_t s = 0; s < kNumPositions; ++s)
      model.psi(r, s) = uniform(rng, -spec.psi_scale, spec.psi_scale);
  }
  model.set_delta(spec.delta ? *spec.delta : default_synthetic_delta());
  model.set_kappa(CutpointVector({-1.5, -0.5, 0.5, 1.5}));
  return model;
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr const char* kSprolimFormat = "protorole.sprolim/1";

inline nlohmann::json model_to_json(const SprolimModel& m) {
  using nlohmann::json;
  auto vals = m.values();
  auto slice = [&](std::size_t off, std::size_t len) {
    return std::vector<double>(vals.begin() + off, vals.begin() + off + len);
  };
  json verbs = json::array();
  for (std::size_t v = 0; v < m.verbs().size(); ++v) {
    const auto& verb = m.verbs()[v];
    json theta = json::array();
    for (std::size_t a = 0; a < verb.n_types; ++a) theta.push_back(slice(m.theta_offset(v, a), m.n_roles()));
    json phi = json::object();
    for (const auto& [n, off] : verb.phi_offset) phi[std::to_string(n)] = slice(off, factorial(n));
    verbs.push_back({{"verb", verb.name}, {"n_types", verb.n_types}, {"theta", theta}, {"phi", phi}});
  }
  json backoff = json::object();
  for (const auto& [n, off] : m.backoff_phi_offsets()) backoff[std::to_string(n)] = slice(off, factorial(n));
  json M = json::array(), E = json::array(), psi = json::array(), delta = json::array();
  for (std::size_t r = 0; r < m.n_roles(); ++r) {
    M.push_back(slice(m.mu_index(r, 0), m.n_props()));
    E.push_back(slice(m.eta_index(r, 0), m.n_props()));
    psi.push_back(slice(m.psi_index(r, 0), kNumPositions));
  }
  const auto d = m.delta();
  for (std::size_t a = 0; a < kNumPositions; ++a) {
    json row = json::array();
    for (std::size_t b = 0; b < kNumPositions; ++b) row.push_back(d(a, b));
    delta.push_back(row);
  }
  json positions = json::array();
  for (auto p : kPositions) positions.push_back(position_name(p));
  return {{"format", kSprolimFormat},
          {"n_roles", m.n_roles()},
          {"arity_cap", m.arity_cap()},
          {"properties", m.properties()},
          {"positions", positions},
          {"verbs", verbs},
          {"backoff_phi", backoff},
          {"M", M},
          {"E", E},
          {"psi", psi},
          {"delta", delta},
          {"kappa", m.kappa().values()}};
}

inline SprolimModel model_from_json(const nlohmann::json& j) {
  if (j.at("format") != kSprolimFormat) throw ConfigError("unsupported sprolim model format");
  const auto n_roles = j.at("n_roles").get<std::size_t>();
  const auto cap = j.at("arity_cap").get<std::size_t>();
  auto props = j.at("properties").get<std::vector<std::string>>();
  std::vector<std::tuple<std::string, std::size_t, std::vector<std::size_t>>> verbs;
  for (const auto& v : j.at("verbs")) {
    std::vector<std::size_t> arities;
    for (const auto& [k, _] : v.at("phi").items()) arities.push_back(std::stoul(k));
    std::sort(arities.begin(), arities.end());
    verbs.emplace_back(v.at("verb").get<std::string>(), v.at("n_types").get<std::size_t>(), arities);
  }
  std::vector<std::size_t> backoff;
  for (const auto& [k, _] : j.at("backoff_phi").items()) backoff.push_back(std::stoul(k));
  std::sort(backoff.begin(), backoff.end());
  SprolimModel m(n_roles, props, cap, verbs, backoff);
  auto vals = m.values();
  auto put = [&](std::size_t off, const nlohmann::json& arr, std::size_t len) {
    auto xs = arr.get<std::vector<double>>();
    if (xs.size() != len) throw ConfigError("sprolim model block has the wrong length");
    std::copy(xs.begin(), xs.end(), vals.begin() + off);
  };
  std::size_t vi = 0;
  for (const auto& v : j.at("verbs")) {
    const auto& verb = m.verbs()[vi];
    for (std::size_t a = 0; a < verb.n_types; ++a) put(m.theta_offset(vi, a), v.at("theta").at(a), n_roles);
    for (const auto& [n, off] : verb.phi_offset) put(off, v.at("phi").at(std::to_string(n)), factorial(n));
    ++vi;
  }
  for (const auto& [n, off] : m.backoff_phi_offsets())
    put(off, j.at("backoff_phi").at(std::to_string(n)), factorial(n));
  for (std::size_t r = 0; r < n_roles; ++r) {
    put(m.mu_index(r, 0), j.at("M").at(r), props.size());
    put(m.eta_index(r, 0), j.at("E").at(r), props.size());
    put(m.psi_index(r, 0), j.at("psi").at(r), kNumPositions);
  }
  PairwiseCoupling d;
  for (std::size_t a = 0; a < kNumPositions; ++a)
    for (std::size_t b = a; b < kNumPositions; ++b) d.set(a, b, j.at("delta").at(a).at(b).get<double>());
  m.set_delta(d);
  m.set_kappa(CutpointVector(j.at("kappa").get<std::array<double, kNumCutpoints>>()));
  return m;
}

inline nlohmann::json fit_to_json(const SprolimFit& f) {
  auto j = model_to_json(f.model);
  j["fit"] = {{"seed", f.seed},          {"epochs", f.epochs},      {"converged", f.converged},
              {"final_objective", f.loglik}, {"n_params", f.n_params}, {"aic", f.aic_value}};
  return j;
}

/// Properties as rows, roles as columns.
inline void write_role_matrix(std::ostream& out, const SprolimModel& m, bool applicability = false) {
  out << "property";
  for (std::size_t r = 0; r < m.n_roles(); ++r) out << "\trole_" << r + 1;
  out << '\n';
  char buf[32];
  for (std::size_t p = 0; p < m.n_props(); ++p) {
    out << m.properties()[p];
    for (std::size_t r = 0; r < m.n_roles(); ++r) {
      std::snprintf(buf, sizeof buf, "%.17g", applicability ? m.eta(r, p) : m.mu(r, p));
      out << '\t' << buf;
    }
    out << '\n';
  }
}

/// Psi with positions as rows and roles as columns.
inline void write_psi_matrix(std::ostream& out, const SprolimModel& m) {
  out << "position";
  for (std::size_t r = 0; r < m.n_roles(); ++r) out << "\trole_" << r + 1;
  out << '\n';
  char buf[32];
  for (auto pos : kPositions) {
    out << position_name(pos);
    for (std::size_t r = 0; r < m.n_roles(); ++r) {
      std::snprintf(buf, sizeof buf, "%.17g", m.psi(r, index_of(pos)));
      out << '\t' << buf;
    }
    out << '\n';
  }
}

}  // namespace protorole
