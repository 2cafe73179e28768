#pragma once

// Nested stratified cross-validation for the supervised linkers. Folds are
// built over clauses (arguments of one clause never straddle folds) and
// stratified by clause signature. The inner loop picks the L2 strength by
// mean macro-F1 across inner folds; the outer loop refits with that value and
// scores the held-out fold.

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "protorole/corpus.hpp"
#include "protorole/errors.hpp"
#include "protorole/linkers.hpp"
#include "protorole/parallel.hpp"
#include "protorole/rng.hpp"

namespace protorole {

struct CvPlan {
  std::size_t outer_folds = 10;
  std::size_t inner_folds = 10;
  std::vector<double> alpha_grid = {0.01, 0.1, 1, 2, 5, 10};
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  FitOptions fit;
};

/// Fold index per clause. Strata smaller than the fold count are pooled
/// into one catch-all stratum; each stratum is shuffled and dealt round-robin,
/// continuing the deal where the previous stratum stopped.
inline std::vector<std::size_t> make_folds(const Corpus& corpus, std::size_t n_folds,
                                           std::uint64_t seed) {
  if (n_folds == 0) throw ConfigError("make_folds: need at least one fold");
  if (corpus.clauses.size() < n_folds)
    throw ConfigError("make_folds: " + std::to_string(corpus.clauses.size()) +
                      " clauses cannot fill " + std::to_string(n_folds) + " folds");
  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < corpus.clauses.size(); ++i)
    strata[signature_key(clause_signature(corpus.clauses[i]))].push_back(i);
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::size_t> catch_all;
  for (auto& [key, members] : strata) {
    if (members.size() < n_folds) catch_all.insert(catch_all.end(), members.begin(), members.end());
    else groups.push_back(std::move(members));
  }
  if (!catch_all.empty()) {
    std::sort(catch_all.begin(), catch_all.end());
    groups.push_back(std::move(catch_all));
  }
  Rng rng(seed);
  std::vector<std::size_t> fold(corpus.clauses.size());
  std::size_t next = 0;
  for (auto& g : groups) {
    shuffle(rng, g);
    for (auto i : g) fold[i] = next++ % n_folds;
  }
  return fold;
}

using Confusion = std::array<std::array<long, kNumPositions>, kNumPositions>;  // [gold][predicted]

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool undefined = false;  // some ratio was 0/0 and set to 0
};

inline std::array<ClassMetrics, kNumPositions> prf(const Confusion& m) {
  std::array<ClassMetrics, kNumPositions> out{};
  for (std::size_t c = 0; c < kNumPositions; ++c) {
    long tp = m[c][c], gold = 0, pred = 0;
    for (std::size_t k = 0; k < kNumPositions; ++k) {
      gold += m[c][k];
      pred += m[k][c];
    }
    auto& x = out[c];
    if (pred > 0) x.precision = static_cast<double>(tp) / pred;
    else x.undefined = true;
    if (gold > 0) x.recall = static_cast<double>(tp) / gold;
    else x.undefined = true;
    if (x.precision + x.recall > 0) x.f1 = 2 * x.precision * x.recall / (x.precision + x.recall);
  }
  return out;
}

inline double macro_f1(const std::array<ClassMetrics, kNumPositions>& m) {
  double s = 0.0;
  for (const auto& c : m) s += c.f1;
  return s / kNumPositions;
}

enum class Locality { Local, Global };

struct ModelFamily {
  Locality locality = Locality::Local;
  Predictors predictors = Predictors::Featural;
  std::string scheme;  // categorical only

  /// "local-featural", "global-categorical", ...
  static ModelFamily parse(const std::string& name, const std::string& scheme = "") {
    ModelFamily f;
    auto dash = name.find('-');
    if (dash == std::string::npos) throw ConfigError("unknown model family '" + name + "'");
    auto loc = name.substr(0, dash), pred = name.substr(dash + 1);
    if (loc == "local") f.locality = Locality::Local;
    else if (loc == "global") f.locality = Locality::Global;
    else throw ConfigError("unknown model family '" + name + "'");
    if (pred == "featural") f.predictors = Predictors::Featural;
    else if (pred == "categorical") f.predictors = Predictors::Categorical;
    else throw ConfigError("unknown model family '" + name + "'");
    if (f.predictors == Predictors::Categorical) {
      if (scheme.empty()) throw ConfigError("categorical families need a role scheme");
      f.scheme = scheme;
    }
    return f;
  }

  std::string name() const {
    std::string s = locality == Locality::Local ? "local-" : "global-";
    s += predictors == Predictors::Featural ? "featural" : "categorical";
    if (predictors == Predictors::Categorical) s += ":" + scheme;
    return s;
  }
};

struct FoldResult {
  std::size_t fold = 0;
  double alpha = 0.0;
  std::vector<double> inner_scores;  // mean inner macro-F1 per grid value
  Confusion confusion{};
  std::array<ClassMetrics, kNumPositions> metrics{};
  double macro_f1 = 0.0;
  std::size_t test_clauses = 0;
  std::vector<double> coefficients;  // flat fitted parameters
};

struct CvReport {
  std::string family;
  std::vector<std::string> feature_names;
  std::vector<double> alpha_grid;
  std::size_t n_clauses = 0;
  std::size_t skipped_clauses = 0;  // lacking the requested annotations
  std::vector<FoldResult> folds;
  std::array<ClassMetrics, kNumPositions> mean{};
  double mean_macro_f1 = 0.0;
  Confusion total_confusion{};
  std::vector<double> mean_coefficients;
};

namespace detail {

struct PreparedData {
  Corpus corpus;
  FeatureSpace space;
  std::size_t skipped = 0;
};

inline PreparedData prepare(const Corpus& corpus, const ModelFamily& family) {
  PreparedData d;
  if (family.predictors == Predictors::Featural) {
    d.corpus = corpus;
    d.space = FeatureSpace::featural(corpus);
    return d;
  }
  if (!corpus.has_scheme(family.scheme))
    throw ConfigError("corpus lacks '" + family.scheme + "' role annotations");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < corpus.clauses.size(); ++i) {
    const auto& toks = corpus.clauses[i].tokens;
    if (std::all_of(toks.begin(), toks.end(),
                    [&](const auto& t) { return t.categorical_roles.contains(family.scheme); }))
      keep.push_back(i);
  }
  d.skipped = corpus.clauses.size() - keep.size();
  d.corpus = corpus.subset(keep);
  if (d.corpus.clauses.empty())
    throw ConfigError("no clause is fully annotated with '" + family.scheme + "' roles");
  d.space = FeatureSpace::categorical(d.corpus, family.scheme);
  return d;
}

inline std::size_t argmax(const PositionScores& p) {
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

/// Fits on `train`, predicts `test`; returns the confusion matrix and the
/// flat fitted parameters.
inline std::pair<Confusion, std::vector<double>> train_and_test(const Corpus& train,
                                                                const Corpus& test,
                                                                const FeatureSpace& space,
                                                                Locality locality, double alpha,
                                                                const FitOptions& opt) {
  Confusion conf{};
  if (locality == Locality::Local) {
    auto data = labeled_arguments(train, space);
    auto params = fit_local(data, space.names, alpha, opt);
    for (const auto& c : test.clauses)
      for (const auto& t : c.tokens)
        ++conf[index_of(t.position)][argmax(local_predict(space.featurize(t), params))];
    return {conf, flatten(params)};
  }
  auto data = labeled_clauses(train, space);
  auto params = fit_global(data, space.names, alpha, opt);
  for (const auto& c : test.clauses) {
    std::vector<FeatureVector> xs;
    for (const auto& t : c.tokens) xs.push_back(space.featurize(t));
    const auto best = crf_infer(xs, params, opt.arity_cap).best();
    for (std::size_t i = 0; i < xs.size(); ++i) ++conf[index_of(c.tokens[i].position)][index_of(best[i])];
  }
  return {conf, flatten(params)};
}

inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split(
    const std::vector<std::size_t>& folds, std::size_t k) {
  std::vector<std::size_t> train, test;
  for (std::size_t i = 0; i < folds.size(); ++i) (folds[i] == k ? test : train).push_back(i);
  return {train, test};
}

}  // namespace detail

inline CvReport nested_cv(const Corpus& corpus, const ModelFamily& family, const CvPlan& plan) {
  if (plan.alpha_grid.empty()) throw ConfigError("empty alpha grid");
  auto prepared = detail::prepare(corpus, family);
  const auto& data = prepared.corpus;
  const auto& space = prepared.space;
  const auto outer = make_folds(data, plan.outer_folds, plan.seed);
  FitOptions opt = plan.fit;
  opt.jobs = 1;

  auto results = parallel_map(plan.outer_folds, plan.jobs, [&](std::size_t k) {
    auto [train_idx, test_idx] = detail::split(outer, k);
    const Corpus train = data.subset(train_idx);
    const Corpus test = data.subset(test_idx);
    const auto inner = make_folds(train, plan.inner_folds, derive_seed(plan.seed, k + 1));
    FoldResult fr;
    fr.fold = k;
    std::size_t best = 0;
    for (std::size_t a = 0; a < plan.alpha_grid.size(); ++a) {
      double total = 0.0;
      for (std::size_t j = 0; j < plan.inner_folds; ++j) {
        auto [itrain, itest] = detail::split(inner, j);
        auto [conf, coef] = detail::train_and_test(train.subset(itrain), train.subset(itest), space,
                                                   family.locality, plan.alpha_grid[a], opt);
        total += macro_f1(prf(conf));
      }
      fr.inner_scores.push_back(total / static_cast<double>(plan.inner_folds));
      if (fr.inner_scores[a] > fr.inner_scores[best]) best = a;
    }
    fr.alpha = plan.alpha_grid[best];
    auto [conf, coef] = detail::train_and_test(train, test, space, family.locality, fr.alpha, opt);
    fr.confusion = conf;
    fr.metrics = prf(conf);
    fr.macro_f1 = macro_f1(fr.metrics);
    fr.test_clauses = test.clauses.size();
    fr.coefficients = std::move(coef);
    return fr;
  });

  CvReport rep;
  rep.family = family.name();
  rep.feature_names = space.names;
  rep.alpha_grid = plan.alpha_grid;
  rep.n_clauses = data.clauses.size();
  rep.skipped_clauses = prepared.skipped;
  rep.folds = std::move(results);
  const double nf = static_cast<double>(rep.folds.size());
  rep.mean_coefficients.assign(rep.folds.front().coefficients.size(), 0.0);
  for (const auto& f : rep.folds) {
    for (std::size_t c = 0; c < kNumPositions; ++c) {
      rep.mean[c].precision += f.metrics[c].precision / nf;
      rep.mean[c].recall += f.metrics[c].recall / nf;
      rep.mean[c].f1 += f.metrics[c].f1 / nf;
      rep.mean[c].undefined = rep.mean[c].undefined || f.metrics[c].undefined;
      for (std::size_t k = 0; k < kNumPositions; ++k) rep.total_confusion[c][k] += f.confusion[c][k];
    }
    rep.mean_macro_f1 += f.macro_f1 / nf;
    for (std::size_t i = 0; i < f.coefficients.size(); ++i) rep.mean_coefficients[i] += f.coefficients[i] / nf;
  }
  return rep;
}

inline void to_json(nlohmann::json& j, const ClassMetrics& m) {
  j = {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"undefined", m.undefined}};
}

namespace detail {

inline nlohmann::json metrics_json(const std::array<ClassMetrics, kNumPositions>& m) {
  nlohmann::json j = nlohmann::json::object();
  for (auto p : kPositions) j[std::string(position_name(p))] = m[index_of(p)];
  return j;
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const CvReport& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.folds)
    folds.push_back({{"fold", f.fold},
                     {"alpha", f.alpha},
                     {"inner_scores", f.inner_scores},
                     {"confusion", f.confusion},
                     {"metrics", detail::metrics_json(f.metrics)},
                     {"macro_f1", f.macro_f1},
                     {"test_clauses", f.test_clauses}});
  j = {{"format", "protorole.cvreport/1"},
       {"family", r.family},
       {"positions", position_names_json()},
       {"feature_names", r.feature_names},
       {"alpha_grid", r.alpha_grid},
       {"n_clauses", r.n_clauses},
       {"skipped_clauses", r.skipped_clauses},
       {"folds", folds},
       {"mean", detail::metrics_json(r.mean)},
       {"mean_macro_f1", r.mean_macro_f1},
       {"total_confusion", r.total_confusion},
       {"mean_coefficients", r.mean_coefficients}};
}

/// One row per position and fold, then the mean rows.
inline void write_summary_tsv(std::ostream& out, const CvReport& r) {
  char buf[160];
  out << "model\tposition\tfold\talpha\tprecision\trecall\tf1\n";
  auto row = [&](const std::string& fold, const std::string& alpha, SyntacticPosition p,
                 const ClassMetrics& m) {
    std::snprintf(buf, sizeof buf, "\t%.6f\t%.6f\t%.6f", m.precision, m.recall, m.f1);
    out << r.family << '\t' << position_name(p) << '\t' << fold << '\t' << alpha << buf << '\n';
  };
  for (const auto& f : r.folds) {
    std::snprintf(buf, sizeof buf, "%g", f.alpha);
    std::string alpha = buf;
    for (auto p : kPositions) row(std::to_string(f.fold), alpha, p, f.metrics[index_of(p)]);
  }
  for (auto p : kPositions) row("mean", "-", p, r.mean[index_of(p)]);
  std::snprintf(buf, sizeof buf, "%.6f", r.mean_macro_f1);
  out << r.family << "\tmacro\tmean\t-\t-\t-\t" << buf << '\n';
}

/// Mean fitted coefficients: one row per feature (plus bias) with a column
/// per position, followed by the symmetric position-pair block for global
/// models.
inline void write_coefficients_tsv(std::ostream& out, const CvReport& r) {
  const std::size_t nf = r.feature_names.size();
  const auto& c = r.mean_coefficients;
  char buf[32];
  auto cell = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return std::string(buf);
  };
  out << "feature\tsubject\tobject\toblique\n";
  for (std::size_t k = 0; k < nf; ++k) {
    out << r.feature_names[k];
    for (std::size_t s = 0; s < kNumPositions; ++s) out << '\t' << cell(c[k * kNumPositions + s]);
    out << '\n';
  }
  out << "(bias)";
  for (std::size_t s = 0; s < kNumPositions; ++s) out << '\t' << cell(c[nf * kNumPositions + s]);
  out << '\n';
  const std::size_t off = (nf + 1) * kNumPositions;
  if (c.size() == off + PairwiseCoupling::kSize) {
    for (auto a : kPositions) {
      out << "pair:" << position_name(a);
      for (auto b : kPositions) out << '\t' << cell(c[off + PairwiseCoupling::slot(index_of(a), index_of(b))]);
      out << '\n';
    }
  }
}

}  // namespace protorole
