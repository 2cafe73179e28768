#pragma once

// Supervised linking models. The local model is an L2-regularized
// multinomial logistic regression from one argument's features to its
// position; the global model is a CRF over all arguments of a clause with
// symmetric position-pair couplings. Both are fit by full-batch AdaGrad on
// the per-example objective (sum of NLL + alpha/2 ||W||^2, divided by the
// number of training units), starting from zero weights.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "protorole/corpus.hpp"
#include "protorole/crf.hpp"
#include "protorole/errors.hpp"
#include "protorole/optim.hpp"
#include "protorole/parallel.hpp"

namespace protorole {

using FeatureVector = std::vector<double>;

enum class Predictors { Featural, Categorical };

/// Names the feature columns and how a token maps onto them.
struct FeatureSpace {
  Predictors kind = Predictors::Featural;
  std::string scheme;  // categorical only
  std::vector<std::string> names;

  std::size_t size() const { return names.size(); }

  /// One column per property holding combined_rating.
  static FeatureSpace featural(const Corpus& corpus) {
    return {Predictors::Featural, "", corpus.properties};
  }

  /// One-hot over the sorted role inventory of `scheme` found in the corpus.
  static FeatureSpace categorical(const Corpus& corpus, const std::string& scheme) {
    if (!corpus.has_scheme(scheme)) throw ConfigError("corpus has no '" + scheme + "' annotations");
    std::set<std::string> labels;
    for (const auto& c : corpus.clauses)
      for (const auto& t : c.tokens)
        if (auto it = t.categorical_roles.find(scheme); it != t.categorical_roles.end())
          labels.insert(it->second);
    return {Predictors::Categorical, scheme, {labels.begin(), labels.end()}};
  }

  FeatureVector featurize(const ArgumentToken& token) const {
    FeatureVector x(names.size(), 0.0);
    if (kind == Predictors::Featural) {
      if (token.ratings.size() != names.size()) throw ContractViolation("rating count mismatch");
      for (std::size_t p = 0; p < names.size(); ++p) x[p] = combined_rating(token.ratings[p]);
      return x;
    }
    auto it = token.categorical_roles.find(scheme);
    if (it == token.categorical_roles.end()) return x;
    auto pos = std::lower_bound(names.begin(), names.end(), it->second);
    if (pos != names.end() && *pos == it->second) x[pos - names.begin()] = 1.0;
    return x;
  }
};

struct LabeledArgument {
  FeatureVector x;
  SyntacticPosition y;
};

struct LabeledClause {
  std::vector<FeatureVector> x;
  Configuration y;
  std::string clause_id;
};

struct LocalModelParams {
  std::vector<std::string> feature_names;
  std::vector<double> weights;  // features x 3, row-major
  PositionScores bias{};
  double alpha = 1.0;

  static LocalModelParams zeros(std::vector<std::string> names, double alpha) {
    LocalModelParams p;
    p.weights.assign(names.size() * kNumPositions, 0.0);
    p.feature_names = std::move(names);
    p.alpha = alpha;
    return p;
  }

  std::size_t num_features() const { return feature_names.size(); }
  double w(std::size_t k, std::size_t s) const { return weights[k * kNumPositions + s]; }
  double& w(std::size_t k, std::size_t s) { return weights[k * kNumPositions + s]; }
};

struct GlobalCrfParams {
  std::vector<std::string> feature_names;
  std::vector<double> unary;  // features x 3, row-major
  PositionScores bias{};
  PairwiseCoupling pairwise;
  double alpha = 1.0;

  static GlobalCrfParams zeros(std::vector<std::string> names, double alpha) {
    GlobalCrfParams p;
    p.unary.assign(names.size() * kNumPositions, 0.0);
    p.feature_names = std::move(names);
    p.alpha = alpha;
    return p;
  }

  std::size_t num_features() const { return feature_names.size(); }
  double u(std::size_t k, std::size_t s) const { return unary[k * kNumPositions + s]; }
  double& u(std::size_t k, std::size_t s) { return unary[k * kNumPositions + s]; }
};

inline PositionScores softmax(const PositionScores& scores) {
  const double m = *std::max_element(scores.begin(), scores.end());
  PositionScores p;
  double z = 0.0;
  for (std::size_t s = 0; s < kNumPositions; ++s) z += (p[s] = std::exp(scores[s] - m));
  for (auto& v : p) v /= z;
  return p;
}

namespace detail {

inline PositionScores linear_scores(std::span<const double> x, std::span<const double> w,
                                    const PositionScores& bias) {
  if (w.size() != x.size() * kNumPositions) throw ContractViolation("feature dimension mismatch");
  PositionScores s = bias;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (x[k] == 0.0) continue;
    for (std::size_t p = 0; p < kNumPositions; ++p) s[p] += x[k] * w[k * kNumPositions + p];
  }
  return s;
}

}  // namespace detail

inline PositionScores local_predict(std::span<const double> x, const LocalModelParams& theta) {
  return softmax(detail::linear_scores(x, theta.weights, theta.bias));
}

inline std::vector<PositionScores> crf_unary_scores(std::span<const FeatureVector> features,
                                                    const GlobalCrfParams& theta) {
  std::vector<PositionScores> u;
  u.reserve(features.size());
  for (const auto& x : features) u.push_back(detail::linear_scores(x, theta.unary, theta.bias));
  return u;
}

inline double crf_configuration_logscore(std::span<const FeatureVector> features,
                                         std::span<const SyntacticPosition> s,
                                         const GlobalCrfParams& theta) {
  auto u = crf_unary_scores(features, theta);
  return configuration_logscore(u, s, theta.pairwise);
}

inline CrfDistribution crf_infer(std::span<const FeatureVector> features,
                                 const GlobalCrfParams& theta, std::size_t arity_cap = 4) {
  if (features.size() > arity_cap)
    throw ConfigError("clause arity " + std::to_string(features.size()) + " exceeds cap " +
                      std::to_string(arity_cap));
  auto u = crf_unary_scores(features, theta);
  return crf_enumerate(u, theta.pairwise);
}

struct FitOptions {
  double learning_rate = 0.5;
  double eps = 1e-8;
  std::size_t max_epochs = 5000;
  double grad_tol = 1e-6;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  std::size_t checkpoint_every = 100;
  std::size_t arity_cap = 4;
};

struct FitTrace {
  std::vector<double> objective;  // epoch 0, every checkpoint, final
  std::size_t epochs = 0;
  bool converged = false;
  double final_grad_norm = 0.0;
};

// Flat parameter layouts used by the optimizers and by gradient checks:
// local  = [W (features x 3), bias (3)]
// global = [U (features x 3), bias (3), pairwise (6)]

inline std::vector<double> flatten(const LocalModelParams& p) {
  std::vector<double> v(p.weights);
  v.insert(v.end(), p.bias.begin(), p.bias.end());
  return v;
}

inline void unflatten(std::span<const double> v, LocalModelParams& p) {
  const std::size_t nw = p.weights.size();
  if (v.size() != nw + kNumPositions) throw ContractViolation("local parameter size mismatch");
  std::copy(v.begin(), v.begin() + nw, p.weights.begin());
  std::copy(v.begin() + nw, v.end(), p.bias.begin());
}

inline std::vector<double> flatten(const GlobalCrfParams& p) {
  std::vector<double> v(p.unary);
  v.insert(v.end(), p.bias.begin(), p.bias.end());
  v.insert(v.end(), p.pairwise.values().begin(), p.pairwise.values().end());
  return v;
}

inline void unflatten(std::span<const double> v, GlobalCrfParams& p) {
  const std::size_t nu = p.unary.size();
  if (v.size() != nu + kNumPositions + PairwiseCoupling::kSize)
    throw ContractViolation("global parameter size mismatch");
  std::copy(v.begin(), v.begin() + nu, p.unary.begin());
  std::copy(v.begin() + nu, v.begin() + nu + kNumPositions, p.bias.begin());
  std::copy(v.begin() + nu + kNumPositions, v.end(), p.pairwise.values().begin());
}

namespace detail {

inline constexpr std::size_t kGradientBlock = 128;

struct Partial {
  double value = 0.0;
  std::vector<double> grad;
};

// Sums per-block partials in block order so the reduction does not depend on
// the worker count.
template <class BlockFn>
Partial reduce_blocks(std::size_t n, std::size_t dim, unsigned jobs, BlockFn&& block_fn) {
  const std::size_t nblocks = (n + kGradientBlock - 1) / kGradientBlock;
  auto parts = parallel_map(nblocks, jobs, [&](std::size_t b) {
    Partial part;
    part.grad.assign(dim, 0.0);
    block_fn(b * kGradientBlock, std::min(n, (b + 1) * kGradientBlock), part);
    return part;
  });
  Partial total;
  total.grad.assign(dim, 0.0);
  for (const auto& p : parts) {
    total.value += p.value;
    for (std::size_t i = 0; i < dim; ++i) total.grad[i] += p.grad[i];
  }
  return total;
}

inline double l2_penalty_and_grad(std::span<const double> w, double alpha, std::span<double> grad) {
  double sq = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    sq += w[i] * w[i];
    grad[i] += alpha * w[i];
  }
  return 0.5 * alpha * sq;
}

inline double norm2(std::span<const double> g) {
  double s = 0.0;
  for (double v : g) s += v * v;
  return std::sqrt(s);
}

template <class Objective>
std::vector<double> adagrad_minimize(std::vector<double> x, Objective&& objective,
                                     const FitOptions& opt, FitTrace* trace) {
  AdaGrad adagrad(x.size(), opt.learning_rate, opt.eps);
  std::vector<double> grad;
  FitTrace local;
  FitTrace& tr = trace ? *trace : local;
  tr = FitTrace{};
  double value = objective(x, grad);
  tr.objective.push_back(value);
  std::size_t epoch = 0;
  double gnorm = norm2(grad);
  while (epoch < opt.max_epochs && gnorm >= opt.grad_tol) {
    adagrad.descend(x, grad);
    ++epoch;
    value = objective(x, grad);
    gnorm = norm2(grad);
    if (opt.checkpoint_every && epoch % opt.checkpoint_every == 0) tr.objective.push_back(value);
  }
  if (tr.objective.size() == 1 || !opt.checkpoint_every || epoch % opt.checkpoint_every != 0)
    tr.objective.push_back(value);
  tr.epochs = epoch;
  tr.converged = gnorm < opt.grad_tol;
  tr.final_grad_norm = gnorm;
  return x;
}

}  // namespace detail

/// Per-example local objective and its gradient in the flat layout.
inline double local_objective(std::span<const LabeledArgument> data, const LocalModelParams& shape,
                              std::span<const double> flat, std::vector<double>& grad,
                              unsigned jobs = 1) {
  const std::size_t nf = shape.num_features();
  const std::size_t nw = nf * kNumPositions;
  const std::size_t dim = nw + kNumPositions;
  if (flat.size() != dim) throw ContractViolation("local parameter size mismatch");
  std::span<const double> w = flat.subspan(0, nw);
  PositionScores bias;
  std::copy(flat.begin() + nw, flat.end(), bias.begin());
  auto total = detail::reduce_blocks(data.size(), dim, jobs, [&](std::size_t lo, std::size_t hi,
                                                                 detail::Partial& part) {
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& ex = data[i];
      if (ex.x.size() != nf) throw ContractViolation("feature dimension mismatch");
      auto scores = detail::linear_scores(ex.x, w, bias);
      const double m = *std::max_element(scores.begin(), scores.end());
      double z = 0.0;
      for (double s : scores) z += std::exp(s - m);
      const double logz = m + std::log(z);
      part.value += logz - scores[index_of(ex.y)];
      for (std::size_t s = 0; s < kNumPositions; ++s) {
        const double r = std::exp(scores[s] - logz) - (index_of(ex.y) == s ? 1.0 : 0.0);
        for (std::size_t k = 0; k < nf; ++k)
          if (ex.x[k] != 0.0) part.grad[k * kNumPositions + s] += r * ex.x[k];
        part.grad[nw + s] += r;
      }
    }
  });
  total.value += detail::l2_penalty_and_grad(w, shape.alpha, total.grad);
  const double inv_n = 1.0 / static_cast<double>(std::max<std::size_t>(data.size(), 1));
  for (auto& g : total.grad) g *= inv_n;
  grad = std::move(total.grad);
  return total.value * inv_n;
}

/// Per-clause global CRF objective and its gradient in the flat layout.
inline double global_objective(std::span<const LabeledClause> data, const GlobalCrfParams& shape,
                               std::span<const double> flat, std::vector<double>& grad,
                               unsigned jobs = 1) {
  const std::size_t nf = shape.num_features();
  const std::size_t nu = nf * kNumPositions;
  const std::size_t dim = nu + kNumPositions + PairwiseCoupling::kSize;
  if (flat.size() != dim) throw ContractViolation("global parameter size mismatch");
  std::span<const double> u = flat.subspan(0, nu);
  PositionScores bias;
  std::copy(flat.begin() + nu, flat.begin() + nu + kNumPositions, bias.begin());
  PairwiseCoupling pairwise;
  std::copy(flat.begin() + nu + kNumPositions, flat.end(), pairwise.values().begin());
  auto total = detail::reduce_blocks(data.size(), dim, jobs, [&](std::size_t lo, std::size_t hi,
                                                                 detail::Partial& part) {
    std::vector<PositionScores> unary;
    for (std::size_t c = lo; c < hi; ++c) {
      const auto& ex = data[c];
      if (ex.x.size() != ex.y.size()) throw ContractViolation("clause label length mismatch");
      unary.clear();
      for (const auto& x : ex.x) {
        if (x.size() != nf) throw ContractViolation("feature dimension mismatch");
        unary.push_back(detail::linear_scores(x, u, bias));
      }
      auto dist = crf_enumerate(unary, pairwise);
      part.value -= dist.log_prob[configuration_index(ex.y)];
      auto marg = dist.marginals();
      for (std::size_t i = 0; i < ex.x.size(); ++i) {
        for (std::size_t s = 0; s < kNumPositions; ++s) {
          const double r = marg[i][s] - (index_of(ex.y[i]) == s ? 1.0 : 0.0);
          for (std::size_t k = 0; k < nf; ++k)
            if (ex.x[i][k] != 0.0) part.grad[k * kNumPositions + s] += r * ex.x[i][k];
          part.grad[nu + s] += r;
        }
      }
      auto expected = dist.expected_pair_counts();
      auto observed = pair_counts(ex.y);
      for (std::size_t q = 0; q < PairwiseCoupling::kSize; ++q)
        part.grad[nu + kNumPositions + q] += expected[q] - observed[q];
    }
  });
  // Bias unpenalized; unary and pairwise carry the L2 term.
  double penalty = detail::l2_penalty_and_grad(u, shape.alpha, total.grad);
  std::span<double> gpair(total.grad.data() + nu + kNumPositions, PairwiseCoupling::kSize);
  penalty += detail::l2_penalty_and_grad(pairwise.values(), shape.alpha, gpair);
  total.value += penalty;
  const double inv_n = 1.0 / static_cast<double>(std::max<std::size_t>(data.size(), 1));
  for (auto& g : total.grad) g *= inv_n;
  grad = std::move(total.grad);
  return total.value * inv_n;
}

inline LocalModelParams fit_local(std::span<const LabeledArgument> data,
                                  std::vector<std::string> feature_names, double alpha,
                                  const FitOptions& opt = {}, FitTrace* trace = nullptr) {
  if (data.empty()) throw ConfigError("fit_local: empty training data");
  if (!(alpha > 0.0)) throw ContractViolation("fit_local: alpha must be positive");
  auto params = LocalModelParams::zeros(std::move(feature_names), alpha);
  auto x = detail::adagrad_minimize(
      flatten(params),
      [&](std::span<const double> v, std::vector<double>& g) {
        return local_objective(data, params, v, g, opt.jobs);
      },
      opt, trace);
  unflatten(x, params);
  return params;
}

inline GlobalCrfParams fit_global(std::span<const LabeledClause> data,
                                  std::vector<std::string> feature_names, double alpha,
                                  const FitOptions& opt = {}, FitTrace* trace = nullptr) {
  if (data.empty()) throw ConfigError("fit_global: empty training data");
  if (!(alpha > 0.0)) throw ContractViolation("fit_global: alpha must be positive");
  for (const auto& c : data)
    if (c.x.size() > opt.arity_cap)
      throw ConfigError("fit_global: clause " + c.clause_id + " exceeds the arity cap");
  auto params = GlobalCrfParams::zeros(std::move(feature_names), alpha);
  auto x = detail::adagrad_minimize(
      flatten(params),
      [&](std::span<const double> v, std::vector<double>& g) {
        return global_objective(data, params, v, g, opt.jobs);
      },
      opt, trace);
  unflatten(x, params);
  return params;
}

inline std::vector<LabeledArgument> labeled_arguments(const Corpus& corpus,
                                                      const FeatureSpace& space) {
  std::vector<LabeledArgument> out;
  out.reserve(corpus.num_tokens());
  for (const auto& c : corpus.clauses)
    for (const auto& t : c.tokens) out.push_back({space.featurize(t), t.position});
  return out;
}

inline std::vector<LabeledClause> labeled_clauses(const Corpus& corpus, const FeatureSpace& space) {
  std::vector<LabeledClause> out;
  out.reserve(corpus.clauses.size());
  for (const auto& c : corpus.clauses) {
    LabeledClause lc;
    lc.clause_id = c.clause_id();
    for (const auto& t : c.tokens) {
      lc.x.push_back(space.featurize(t));
      lc.y.push_back(t.position);
    }
    out.push_back(std::move(lc));
  }
  return out;
}

/// Index of the argument predicted as subject by proto-property counting:
/// most proto-agent properties wins, ties go to fewest proto-patient
/// properties, then to surface order. A property counts when it is
/// applicable with likelihood >= threshold.
inline std::size_t dowty_link(const Clause& clause, std::span<const std::size_t> pa_props,
                              std::span<const std::size_t> pp_props, int threshold = 4) {
  if (clause.tokens.empty()) throw ContractViolation("dowty_link: empty clause");
  if (pa_props.empty() || pp_props.empty())
    throw ContractViolation("dowty_link: property sets must be nonempty");
  for (auto a : pa_props)
    if (std::find(pp_props.begin(), pp_props.end(), a) != pp_props.end())
      throw ContractViolation("dowty_link: property sets must be disjoint");
  auto count = [&](const ArgumentToken& t, std::span<const std::size_t> props) {
    int n = 0;
    for (auto p : props) {
      const auto& r = t.ratings.at(p);
      if (r.applicable && *r.likelihood >= threshold) ++n;
    }
    return n;
  };
  std::size_t best = 0;
  int best_pa = count(clause.tokens[0], pa_props);
  int best_pp = count(clause.tokens[0], pp_props);
  for (std::size_t i = 1; i < clause.tokens.size(); ++i) {
    const int pa = count(clause.tokens[i], pa_props);
    const int pp = count(clause.tokens[i], pp_props);
    if (pa > best_pa || (pa == best_pa && pp < best_pp)) {
      best = i;
      best_pa = pa;
      best_pp = pp;
    }
  }
  return best;
}

// JSON documents: {"format": "protorole.local/1" | "protorole.global/1", ...}

inline constexpr const char* kLocalFormat = "protorole.local/1";
inline constexpr const char* kGlobalFormat = "protorole.global/1";

inline nlohmann::json position_names_json() {
  nlohmann::json j = nlohmann::json::array();
  for (auto p : kPositions) j.push_back(position_name(p));
  return j;
}

inline void to_json(nlohmann::json& j, const LocalModelParams& p) {
  j = {{"format", kLocalFormat},
       {"feature_names", p.feature_names},
       {"positions", position_names_json()},
       {"rows", p.num_features()},
       {"cols", kNumPositions},
       {"weights", p.weights},
       {"bias", p.bias},
       {"alpha", p.alpha}};
}

inline void from_json(const nlohmann::json& j, LocalModelParams& p) {
  if (j.at("format") != kLocalFormat) throw ConfigError("unsupported local model format");
  p.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  p.weights = j.at("weights").get<std::vector<double>>();
  p.bias = j.at("bias").get<PositionScores>();
  p.alpha = j.at("alpha").get<double>();
  if (p.weights.size() != p.feature_names.size() * kNumPositions)
    throw ConfigError("local model weight matrix has the wrong size");
}

inline void to_json(nlohmann::json& j, const GlobalCrfParams& p) {
  nlohmann::json pair = nlohmann::json::array();
  for (std::size_t a = 0; a < kNumPositions; ++a) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t b = 0; b < kNumPositions; ++b) row.push_back(p.pairwise(a, b));
    pair.push_back(row);
  }
  j = {{"format", kGlobalFormat},
       {"feature_names", p.feature_names},
       {"positions", position_names_json()},
       {"rows", p.num_features()},
       {"cols", kNumPositions},
       {"unary", p.unary},
       {"bias", p.bias},
       {"pairwise", pair},
       {"alpha", p.alpha}};
}

inline void from_json(const nlohmann::json& j, GlobalCrfParams& p) {
  if (j.at("format") != kGlobalFormat) throw ConfigError("unsupported global model format");
  p.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  p.unary = j.at("unary").get<std::vector<double>>();
  p.bias = j.at("bias").get<PositionScores>();
  p.alpha = j.at("alpha").get<double>();
  const auto& pair = j.at("pairwise");
  for (std::size_t a = 0; a < kNumPositions; ++a)
    for (std::size_t b = a; b < kNumPositions; ++b) {
      const double v = pair.at(a).at(b).get<double>();
      if (v != pair.at(b).at(a).get<double>()) throw ConfigError("pairwise matrix is not symmetric");
      p.pairwise.set(a, b, v);
    }
  if (p.unary.size() != p.feature_names.size() * kNumPositions)
    throw ConfigError("global model unary matrix has the wrong size");
}

}  // namespace protorole
