#include "protorole/evalharness.hpp"

#include <gtest/gtest.h>

#include <set>
#include <sstream>

namespace protorole {
namespace {

using enum SyntacticPosition;

Clause clause_with(const std::string& id, std::vector<SyntacticPosition> positions,
                   std::size_t n_props = 1) {
  Clause c{id, "0", "verb", {}};
  for (std::size_t t = 0; t < positions.size(); ++t)
    c.tokens.push_back({std::to_string(t), positions[t],
                        std::vector<PropertyRating>(n_props, PropertyRating::rated(3)), {}});
  return c;
}

Corpus corpus_of(std::vector<Clause> clauses, std::vector<std::string> props = {"p"}) {
  Corpus c;
  c.properties = std::move(props);
  c.clauses = std::move(clauses);
  c.rebuild_index();
  return c;
}

TEST(MakeFolds, EvenSplitOfOneStratum) {
  std::vector<Clause> cs;
  for (int i = 0; i < 100; ++i) cs.push_back(clause_with(std::to_string(i), {Subject, Object}));
  auto folds = make_folds(corpus_of(cs), 10, 1);
  std::vector<int> size(10);
  for (auto f : folds) ++size[f];
  for (int s : size) EXPECT_EQ(s, 10);
}

TEST(MakeFolds, StratifiesBySignature) {
  std::vector<Clause> cs;
  for (int i = 0; i < 50; ++i) cs.push_back(clause_with("a" + std::to_string(i), {Subject}));
  for (int i = 0; i < 50; ++i) cs.push_back(clause_with("b" + std::to_string(i), {Subject, Object}));
  auto folds = make_folds(corpus_of(cs), 10, 2);
  std::vector<std::array<int, 2>> count(10);
  for (std::size_t i = 0; i < folds.size(); ++i) ++count[folds[i]][i < 50 ? 0 : 1];
  for (const auto& c : count) EXPECT_EQ(c, (std::array<int, 2>{5, 5}));
}

TEST(MakeFolds, PartitionIsDeterministicAndSmallStrataArePooled) {
  Rng rng(3);
  std::vector<Clause> cs;
  for (int i = 0; i < 137; ++i) {
    std::vector<SyntacticPosition> pos{Subject};
    for (std::size_t k = uniform_index(rng, 3); k > 0; --k) pos.push_back(uniform01(rng) < 0.9 ? Object : Oblique);
    cs.push_back(clause_with(std::to_string(i), pos));
  }
  auto corpus = corpus_of(cs);
  auto a = make_folds(corpus, 10, 5), b = make_folds(corpus, 10, 5);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, make_folds(corpus, 10, 6));
  std::vector<int> size(10);
  for (auto f : a) {
    ASSERT_LT(f, 10u);
    ++size[f];
  }
  // Round-robin dealing keeps fold sizes within one of each other.
  EXPECT_LE(*std::max_element(size.begin(), size.end()) - *std::min_element(size.begin(), size.end()), 1);
  EXPECT_THROW(make_folds(corpus.subset({0, 1, 2}), 10, 1), ConfigError);
}

TEST(MakeFolds, ArgumentsNeverStraddleFolds) {
  // Exhaustive scan: map every token to its clause's fold, then check that
  // all tokens sharing a clause id share a fold.
  std::vector<Clause> cs;
  for (int i = 0; i < 60; ++i) cs.push_back(clause_with(std::to_string(i), {Subject, Object, Oblique}));
  auto corpus = corpus_of(cs);
  auto folds = make_folds(corpus, 10, 7);
  std::map<std::string, std::set<std::size_t>> seen;
  for (std::size_t i = 0; i < corpus.clauses.size(); ++i)
    for (std::size_t t = 0; t < corpus.clauses[i].tokens.size(); ++t) seen[corpus.clauses[i].clause_id()].insert(folds[i]);
  for (const auto& [id, fs] : seen) EXPECT_EQ(fs.size(), 1u) << id;
}

TEST(Prf, DiagonalIsPerfect) {
  Confusion m{{{4, 0, 0}, {0, 7, 0}, {0, 0, 2}}};
  for (const auto& c : prf(m)) {
    EXPECT_EQ(c.precision, 1.0);
    EXPECT_EQ(c.recall, 1.0);
    EXPECT_EQ(c.f1, 1.0);
    EXPECT_FALSE(c.undefined);
  }
}

TEST(Prf, HandCountedExample) {
  Confusion m{{{5, 0, 0}, {2, 3, 0}, {0, 0, 0}}};
  auto r = prf(m);
  EXPECT_DOUBLE_EQ(r[0].precision, 5.0 / 7.0);
  EXPECT_DOUBLE_EQ(r[0].recall, 1.0);
  EXPECT_NEAR(r[0].f1, 10.0 / 12.0, 1e-15);
  EXPECT_DOUBLE_EQ(r[1].precision, 1.0);
  EXPECT_DOUBLE_EQ(r[1].recall, 0.6);
  EXPECT_FALSE(r[0].undefined);
  EXPECT_TRUE(r[2].undefined);
  EXPECT_EQ(r[2].precision, 0.0);
  EXPECT_EQ(r[2].recall, 0.0);
  EXPECT_EQ(r[2].f1, 0.0);
}

TEST(Prf, MatchesRawPairCounting) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::pair<int, int>> pairs(1 + uniform_index(rng, 50));
    Confusion m{};
    for (auto& [g, p] : pairs) {
      g = static_cast<int>(uniform_index(rng, 3));
      p = static_cast<int>(uniform_index(rng, 3));
      ++m[g][p];
    }
    auto r = prf(m);
    for (int c = 0; c < 3; ++c) {
      int tp = 0, gold = 0, pred = 0;
      for (auto [g, p] : pairs) {
        tp += g == c && p == c;
        gold += g == c;
        pred += p == c;
      }
      const double prec = pred ? double(tp) / pred : 0.0, rec = gold ? double(tp) / gold : 0.0;
      EXPECT_DOUBLE_EQ(r[c].precision, prec);
      EXPECT_DOUBLE_EQ(r[c].recall, rec);
      EXPECT_NEAR(r[c].f1, prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0, 1e-15);
      EXPECT_GE(r[c].f1, 0.0);
      EXPECT_LE(r[c].f1, 1.0);
    }
  }
}

TEST(Prf, ConstantPredictorClosedForm) {
  // Predicting class 0 everywhere: F1_0 = 2p/(1+p), the rest 0.
  const long n0 = 37, n1 = 50, n2 = 13;
  Confusion m{{{n0, 0, 0}, {n1, 0, 0}, {n2, 0, 0}}};
  const double p = double(n0) / (n0 + n1 + n2);
  EXPECT_NEAR(macro_f1(prf(m)), (2 * p / (1 + p)) / 3.0, 1e-15);
}

TEST(ModelFamily, ParsesNames) {
  auto f = ModelFamily::parse("global-categorical", "verbnet");
  EXPECT_EQ(f.locality, Locality::Global);
  EXPECT_EQ(f.name(), "global-categorical:verbnet");
  EXPECT_EQ(ModelFamily::parse("local-featural").name(), "local-featural");
  EXPECT_THROW(ModelFamily::parse("local-categorical"), ConfigError);
  EXPECT_THROW(ModelFamily::parse("semi-featural"), ConfigError);
}

// Position is readable off one property per position.
Corpus perfect_corpus(std::size_t n) {
  std::vector<Clause> cs;
  const std::vector<std::vector<SyntacticPosition>> shapes{{Subject}, {Subject, Object}, {Object, Oblique},
                                                           {Subject, Oblique, Object}};
  for (std::size_t i = 0; i < n; ++i) {
    auto c = clause_with(std::to_string(i), shapes[i % shapes.size()], 3);
    for (auto& t : c.tokens)
      for (std::size_t p = 0; p < 3; ++p)
        t.ratings[p] = p == index_of(t.position) ? PropertyRating::rated(5) : PropertyRating::not_applicable();
    cs.push_back(std::move(c));
  }
  return corpus_of(cs, {"s", "o", "x"});
}

CvPlan small_plan() {
  CvPlan plan;
  plan.outer_folds = 4;
  plan.inner_folds = 3;
  plan.alpha_grid = {0.01, 1};
  plan.seed = 42;
  plan.fit.max_epochs = 300;
  return plan;
}

TEST(NestedCv, PerfectPredictorScoresOne) {
  auto corpus = perfect_corpus(80);
  for (const auto* fam : {"local-featural", "global-featural"}) {
    auto rep = nested_cv(corpus, ModelFamily::parse(fam), small_plan());
    EXPECT_EQ(rep.folds.size(), 4u);
    EXPECT_DOUBLE_EQ(rep.mean_macro_f1, 1.0) << fam;
    for (const auto& m : rep.mean) EXPECT_DOUBLE_EQ(m.f1, 1.0);
    std::size_t tested = 0;
    for (const auto& f : rep.folds) tested += f.test_clauses;
    EXPECT_EQ(tested, 80u);
  }
}

TEST(NestedCv, ShuffledLabelsScoreNearThePriorBaseline) {
  // Single-argument clauses with features independent of the label.
  Rng rng(9);
  std::vector<Clause> cs;
  for (int i = 0; i < 2000; ++i) {
    const double u = uniform01(rng);
    auto c = clause_with(std::to_string(i), {u < 0.6 ? Subject : u < 0.9 ? Object : Oblique}, 4);
    for (auto& r : c.tokens[0].ratings) {
      const auto l = uniform_index(rng, 6);
      r = l ? PropertyRating::rated(static_cast<int>(l)) : PropertyRating::not_applicable();
    }
    cs.push_back(std::move(c));
  }
  auto corpus = corpus_of(cs, {"a", "b", "c", "d"});
  auto plan = small_plan();
  plan.alpha_grid = {1, 10};
  auto rep = nested_cv(corpus, ModelFamily::parse("local-featural"), plan);
  long counts[3] = {0, 0, 0};
  for (const auto& c : corpus.clauses) ++counts[index_of(c.tokens[0].position)];
  const double p = double(*std::max_element(counts, counts + 3)) / 2000.0;
  EXPECT_NEAR(rep.mean_macro_f1, (2 * p / (1 + p)) / 3.0, 0.05);
}

TEST(NestedCv, ReproducibleAcrossWorkerCounts) {
  auto corpus = perfect_corpus(60);
  // Add noise so the grid search has something to decide.
  Rng rng(10);
  for (auto& c : corpus.clauses)
    for (auto& t : c.tokens)
      for (auto& r : t.ratings)
        if (uniform01(rng) < 0.3) r = PropertyRating::rated(1 + static_cast<int>(uniform_index(rng, 5)));
  auto plan = small_plan();
  auto a = nested_cv(corpus, ModelFamily::parse("global-featural"), plan);
  plan.jobs = 3;
  auto b = nested_cv(corpus, ModelFamily::parse("global-featural"), plan);
  EXPECT_EQ(nlohmann::json(a).dump(), nlohmann::json(b).dump());
  std::ostringstream ta, tb;
  write_summary_tsv(ta, a);
  write_summary_tsv(tb, b);
  EXPECT_EQ(ta.str(), tb.str());
  for (const auto& f : a.folds) {
    EXPECT_EQ(f.inner_scores.size(), 2u);
    const auto best = std::max_element(f.inner_scores.begin(), f.inner_scores.end()) - f.inner_scores.begin();
    EXPECT_EQ(f.alpha, plan.alpha_grid[best]);
  }
}

TEST(NestedCv, CategoricalFamiliesNeedTheirScheme) {
  auto corpus = perfect_corpus(40);
  EXPECT_THROW(nested_cv(corpus, ModelFamily::parse("local-categorical", "verbnet"), small_plan()), ConfigError);
  corpus.role_schemes = {"verbnet"};
  for (std::size_t i = 0; i < corpus.clauses.size(); ++i) {
    if (i % 5 == 0) continue;  // unannotated clause
    for (auto& t : corpus.clauses[i].tokens)
      t.categorical_roles["verbnet"] = t.position == Subject ? "Agent" : t.position == Object ? "Theme" : "Location";
  }
  auto rep = nested_cv(corpus, ModelFamily::parse("local-categorical", "verbnet"), small_plan());
  EXPECT_EQ(rep.skipped_clauses, 8u);
  EXPECT_EQ(rep.n_clauses, 32u);
  EXPECT_EQ(rep.feature_names, (std::vector<std::string>{"Agent", "Location", "Theme"}));
  EXPECT_DOUBLE_EQ(rep.mean_macro_f1, 1.0);
}

TEST(Reports, TableShapes) {
  auto rep = nested_cv(perfect_corpus(40), ModelFamily::parse("global-featural"), small_plan());
  std::ostringstream summary, coef;
  write_summary_tsv(summary, rep);
  write_coefficients_tsv(coef, rep);
  const std::string s = summary.str(), c = coef.str();
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 1 + 4 * 3 + 3 + 1);
  EXPECT_EQ(s.substr(0, s.find('\n')), "model\tposition\tfold\talpha\tprecision\trecall\tf1");
  EXPECT_NE(s.find("global-featural\tmacro\tmean\t-\t-\t-\t1.000000\n"), std::string::npos);
  // 3 features + bias + 3 pair rows + header
  EXPECT_EQ(std::count(c.begin(), c.end(), '\n'), 8);
  auto j = nlohmann::json(rep);
  EXPECT_EQ(j["format"], "protorole.cvreport/1");
  EXPECT_EQ(j["folds"].size(), 4u);
  EXPECT_EQ(j["mean"]["subject"]["f1"], 1.0);
}

}  // namespace
}  // namespace protorole
