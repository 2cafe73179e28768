#include "protorole/sprolim.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "support/latent_oracle.hpp"

namespace protorole {
namespace {

using enum SyntacticPosition;
using namespace protorole::oracle;

Corpus small_corpus(Rng& rng, std::size_t P) {
  Corpus corpus;
  for (std::size_t p = 0; p < P; ++p) corpus.properties.push_back("p" + std::to_string(p));
  const std::vector<std::pair<std::string, std::vector<SyntacticPosition>>> shapes{
      {"eat", {Subject, Object}}, {"eat", {Object, Subject}}, {"run", {Subject}},
      {"run", {Oblique}},         {"give", {Subject, Object, Oblique}}, {"give", {Object, Oblique, Subject}}};
  for (std::size_t i = 0; i < shapes.size(); ++i)
    corpus.clauses.push_back(make_clause(shapes[i].first, shapes[i].second,
                                         random_ratings(rng, shapes[i].second.size(), P), std::to_string(i)));
  corpus.rebuild_index();
  return corpus;
}

TEST(Permutations, CountsAndDistinctness) {
  EXPECT_EQ(enumerate_permutations(1).size(), 1u);
  EXPECT_EQ(enumerate_permutations(2), (std::vector<Permutation>{{0, 1}, {1, 0}}));
  const auto& p3 = enumerate_permutations(3);
  EXPECT_EQ(p3.size(), 6u);
  EXPECT_EQ(std::set<Permutation>(p3.begin(), p3.end()).size(), 6u);
  for (const auto& p : p3) EXPECT_EQ(std::set<int>(p.begin(), p.end()), (std::set<int>{0, 1, 2}));
  EXPECT_TRUE(std::is_sorted(p3.begin(), p3.end()));
  EXPECT_EQ(enumerate_permutations(4).size(), 24u);
  EXPECT_THROW(enumerate_permutations(5), ConfigError);
  EXPECT_THROW(enumerate_permutations(3, 2), ConfigError);
}

TEST(ClauseLoglik, TwoArgumentsTwoRolesHandSet) {
  SprolimModel m(2, {"p", "q"}, 4, {{"give", 2, {2}}}, {});
  auto th0 = m.theta(0, 0), th1 = m.theta(0, 1);
  th0[0] = 0.8, th0[1] = 0.2, th1[0] = 0.3, th1[1] = 0.7;
  auto vals = m.values();
  vals[*m.phi_offset(0, 2)] = 0.6;
  vals[*m.phi_offset(0, 2) + 1] = 0.4;
  m.mu(0, 0) = 1.0, m.mu(0, 1) = -0.5, m.mu(1, 0) = -1.0, m.mu(1, 1) = 0.75;
  m.eta(0, 0) = 0.9, m.eta(0, 1) = 0.4, m.eta(1, 0) = 0.6, m.eta(1, 1) = 0.2;
  m.psi(0, 0) = 1.0, m.psi(1, 1) = 0.5, m.psi(1, 2) = -0.25;
  auto d = default_synthetic_delta();
  m.set_delta(d);
  auto clause = make_clause("give", {Subject, Object}, {{5, 0}, {2, 3}});
  const double ll = clause_loglik(clause, m);
  const long double oracle = brute_force_likelihood(clause, m);
  EXPECT_LT(std::abs(std::exp(ll) - oracle) / oracle, 1e-10);
}

TEST(ClauseLoglik, AgreesWithExhaustiveEnumeration) {
  Rng rng(17);
  for (std::size_t R = 1; R <= 3; ++R)
    for (std::size_t n = 1; n <= 3; ++n)
      for (int trial = 0; trial < 3; ++trial) {
        SprolimModel m(R, {"a", "b", "c"}, 4, {{"v", n, {n}}}, {});
        random_interior(m, rng);
        std::vector<SyntacticPosition> pos(n);
        for (auto& s : pos) s = kPositions[uniform_index(rng, 3)];
        auto clause = make_clause("v", pos, random_ratings(rng, n, 3));
        const double ll = clause_loglik(clause, m);
        const long double oracle = brute_force_likelihood(clause, m);
        EXPECT_LT(std::abs(std::exp(static_cast<long double>(ll)) - oracle) / oracle, 1e-10)
            << "R=" << R << " n=" << n;
      }
}

TEST(ClauseLoglik, SingleRoleDegeneracy) {
  // With one role, Theta contributes 1 and the Phi sum is 1, so the value is
  // the emission product times the CRF probability.
  Rng rng(18);
  SprolimModel m(1, {"a", "b"}, 4, {{"v", 3, {3}}}, {});
  random_interior(m, rng);
  auto clause = make_clause("v", {Object, Subject, Oblique}, random_ratings(rng, 3, 2));
  long double direct = crf_prob({0, 0, 0}, {Object, Subject, Oblique}, m);
  for (const auto& t : clause.tokens)
    for (std::size_t p = 0; p < 2; ++p) direct *= rating_prob(t.ratings[p], m.mu(0, p), m.eta(0, p), m.kappa().values());
  EXPECT_NEAR(clause_loglik(clause, m), static_cast<double>(std::log(direct)), 1e-12);
}

TEST(ClauseLoglik, PrefixConventionForShortClauses) {
  // A one-argument clause of a verb with two types uses type 0 only.
  Rng rng(19);
  SprolimModel m(2, {"a"}, 4, {{"v", 2, {1, 2}}}, {});
  random_interior(m, rng);
  auto clause = make_clause("v", {Subject}, {{4}});
  auto th = m.theta(0, 0);
  std::vector<std::vector<double>> rows{{th[0], th[1]}};
  const long double oracle = brute_force_likelihood(clause, m, rows, {1.0});
  EXPECT_NEAR(clause_loglik(clause, m), static_cast<double>(std::log(oracle)), 1e-12);
}

TEST(ClauseLoglik, UnseenVerbsAndHeldOutBackoff) {
  Rng rng(20);
  SprolimModel m(2, {"a", "b"}, 4, {{"v", 2, {2}}}, {});
  random_interior(m, rng);
  auto unseen = make_clause("w", {Subject, Object}, random_ratings(rng, 2, 2));
  EXPECT_THROW(clause_loglik(unseen, m, ScoringMode::Training), ConfigError);
  std::vector<std::vector<double>> uniform_rows(2, {0.5, 0.5});
  const long double oracle = brute_force_likelihood(unseen, m, uniform_rows, {0.5, 0.5});
  EXPECT_NEAR(clause_loglik(unseen, m, ScoringMode::HeldOut), static_cast<double>(std::log(oracle)), 1e-12);
  // Arity beyond the verb's types also backs off when held out.
  auto longer = make_clause("v", {Subject, Object, Oblique}, random_ratings(rng, 3, 2));
  EXPECT_THROW(clause_loglik(longer, m, ScoringMode::Training), ConfigError);
  EXPECT_TRUE(std::isfinite(clause_loglik(longer, m, ScoringMode::HeldOut)));
  auto too_long = make_clause("v", {Subject, Object, Oblique, Oblique, Oblique}, random_ratings(rng, 5, 2));
  EXPECT_THROW(clause_loglik(too_long, m, ScoringMode::HeldOut), ConfigError);
}

TEST(CorpusLoglik, IsAdditive) {
  Rng rng(21);
  auto corpus = small_corpus(rng, 3);
  auto m = SprolimModel::for_corpus(corpus, 2, 4, 1);
  random_interior(m, rng);
  EXPECT_EQ(corpus_loglik(Corpus{}, m), 0.0);
  double sum = 0.0;
  for (const auto& c : corpus.clauses) sum += clause_loglik(c, m);
  EXPECT_NEAR(corpus_loglik(corpus, m), sum, 1e-12);
  EXPECT_EQ(corpus_loglik(corpus.subset({0}), m), clause_loglik(corpus.clauses[0], m));
}

TEST(CorpusLoglik, GradientMatchesFiniteDifferences) {
  Rng rng(22);
  auto corpus = small_corpus(rng, 2);
  corpus.clauses.resize(5);
  corpus.rebuild_index();
  auto m = SprolimModel::for_corpus(corpus, 2, 4, 1);
  random_interior(m, rng);
  std::vector<double> grad;
  corpus_loglik(corpus, m, ScoringMode::Training, &grad);
  const double h = 1e-6;
  for (std::size_t i = 0; i < m.size(); ++i) {
    auto mp = m, mm = m;
    mp.values()[i] += h;
    mm.values()[i] -= h;
    const double fd = (corpus_loglik(corpus, mp) - corpus_loglik(corpus, mm)) / (2 * h);
    EXPECT_LT(std::abs(grad[i] - fd) / std::max({std::abs(grad[i]), std::abs(fd), 1e-4}), 1e-4) << i;
  }
}

TEST(CorpusLoglik, InvariantUnderRoleRelabeling) {
  Rng rng(23);
  auto corpus = small_corpus(rng, 3);
  auto m = SprolimModel::for_corpus(corpus, 3, 4, 1);
  random_interior(m, rng);
  const std::array<std::size_t, 3> pi{2, 0, 1};  // old role r -> new role pi[r]
  auto relabeled = m;
  for (std::size_t v = 0; v < m.verbs().size(); ++v)
    for (std::size_t a = 0; a < m.verbs()[v].n_types; ++a)
      for (std::size_t r = 0; r < 3; ++r) relabeled.theta(v, a)[pi[r]] = m.theta(v, a)[r];
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t p = 0; p < 3; ++p) {
      relabeled.mu(pi[r], p) = m.mu(r, p);
      relabeled.eta(pi[r], p) = m.eta(r, p);
    }
    for (std::size_t s = 0; s < 3; ++s) relabeled.psi(pi[r], s) = m.psi(r, s);
  }
  EXPECT_NE(relabeled.values()[0], m.values()[0]);
  const double a = corpus_loglik(corpus, m), b = corpus_loglik(corpus, relabeled);
  EXPECT_NEAR(a, b, 1e-12 * std::abs(a));
}

TEST(CorpusLoglik, InvariantUnderArgumentTypeRelabeling) {
  // Only full-arity clauses, so a type permutation never leaves the prefix.
  Rng rng(24);
  Corpus corpus;
  corpus.properties = {"a", "b"};
  for (int i = 0; i < 4; ++i) {
    auto pos = i % 2 ? std::vector{Subject, Object, Oblique} : std::vector{Oblique, Subject, Object};
    corpus.clauses.push_back(make_clause("v", pos, random_ratings(rng, 3, 2), std::to_string(i)));
  }
  corpus.rebuild_index();
  auto m = SprolimModel::for_corpus(corpus, 2, 4);
  random_interior(m, rng);
  const std::array<std::uint8_t, 3> pi{1, 2, 0};  // type a -> pi[a]
  auto relabeled = m;
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t r = 0; r < 2; ++r) relabeled.theta(0, pi[a])[r] = m.theta(0, a)[r];
  const auto& perms = enumerate_permutations(3);
  const auto off = *m.phi_offset(0, 3);
  for (std::size_t c = 0; c < perms.size(); ++c) {
    Permutation moved(3);
    for (std::size_t t = 0; t < 3; ++t) moved[t] = pi[perms[c][t]];
    const auto c2 = std::find(perms.begin(), perms.end(), moved) - perms.begin();
    relabeled.values()[off + c2] = m.values()[off + c];
  }
  const double a = corpus_loglik(corpus, m), b = corpus_loglik(corpus, relabeled);
  EXPECT_NEAR(a, b, 1e-12 * std::abs(a));
}

TEST(Projection, RestoresFeasibility) {
  Rng rng(25);
  auto corpus = small_corpus(rng, 3);
  auto m = SprolimModel::for_corpus(corpus, 3, 4, 1);
  for (auto& x : m.values()) x = uniform(rng, -3, 3);
  m.project(1e-4);
  for (auto [o, len] : m.simplex_rows()) {
    double s = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      EXPECT_GE(m.values()[o + i], 0.0);
      s += m.values()[o + i];
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t p = 0; p < 3; ++p) {
      EXPECT_GE(m.eta(r, p), kEtaFloor);
      EXPECT_LE(m.eta(r, p), 1 - kEtaFloor);
    }
  auto k = m.kappa().values();
  for (int i = 0; i < 3; ++i) EXPECT_LE(k[i], k[i + 1]);
}

TEST(Aic, ArithmeticAndParameterCount) {
  EXPECT_EQ(aic(-100.0, 10), 220.0);
  EXPECT_GT(aic(-100.0, 11), aic(-100.0, 10));
  EXPECT_THROW(aic(0.0, 0), ContractViolation);

  std::vector<std::string> props(18, "p");
  SprolimModel m(2, props, 4, {{"v", 2, {2}}}, {});
  EXPECT_EQ(m.num_free_parameters(), 91u);
  // Recount: every stored slot is free except one per simplex row.
  EXPECT_EQ(m.size() - m.simplex_rows().size(), 91u);

  // Backoff rows are counted once, arity-1 rows contribute nothing.
  SprolimModel b(3, {"a"}, 4, {{"x", 3, {3}}, {"y", 2, {1}}}, {2});
  std::size_t slots = b.size() - b.simplex_rows().size();
  EXPECT_EQ(b.num_free_parameters(), slots);
  EXPECT_EQ(b.num_free_parameters(), 3 * 2 + 2 * 2 + 5 + 0 + 1 + 2 * 3 + 9 + 6 + 4);
}

TEST(ForCorpus, BackoffForRareArities) {
  Rng rng(26);
  auto corpus = small_corpus(rng, 2);
  auto m = SprolimModel::for_corpus(corpus, 2, 4, 2);
  // eat: arity 2 twice; run: arity 1 twice; give: arity 3 twice.
  for (std::size_t v = 0; v < m.verbs().size(); ++v) EXPECT_EQ(m.verbs()[v].phi_offset.size(), 1u);
  EXPECT_TRUE(m.backoff_phi_offsets().empty());
  corpus.clauses.push_back(make_clause("eat", {Subject}, {{1, 1}}, "extra"));
  corpus.rebuild_index();
  m = SprolimModel::for_corpus(corpus, 2, 4, 2);
  const auto eat = *m.verb_index("eat");
  EXPECT_EQ(m.verbs()[eat].phi_offset.count(1), 0u);
  EXPECT_EQ(m.backoff_phi_offsets().count(1), 1u);
  EXPECT_EQ(*m.phi_offset(eat, 1), m.backoff_phi_offsets().at(1));
  EXPECT_TRUE(std::isfinite(corpus_loglik(corpus, m)));
}

SprolimModel point_mass_model() {
  SprolimModel m(2, {"a", "b"}, 4, {{"v", 2, {2}}}, {});
  m.theta(0, 0)[0] = 1.0, m.theta(0, 0)[1] = 0.0;
  m.theta(0, 1)[0] = 0.0, m.theta(0, 1)[1] = 1.0;
  const auto off = *m.phi_offset(0, 2);
  m.values()[off] = 0.7;
  m.values()[off + 1] = 0.3;
  m.psi(0, 0) = 2.0;
  m.psi(1, 1) = 2.0;
  m.set_delta(default_synthetic_delta());
  return m;
}

TEST(Generate, RoleFrequenciesFollowThetaAndPhi) {
  auto m = point_mass_model();
  const std::vector<double> arity{0.0, 1.0};
  GenerateReport rep;
  auto corpus = generate(m, 10000, arity, 5, &rep);
  ASSERT_EQ(corpus.clauses.size(), 10000u);
  EXPECT_EQ(rep.skipped, 0u);
  // Token 0 carries role 0 exactly when the identity alignment was drawn.
  std::size_t first_r0 = 0;
  for (const auto& c : corpus.clauses) {
    ASSERT_EQ(c.arity(), 2u);
    const auto& r0 = c.tokens[0].categorical_roles.at(kLatentScheme);
    const auto& r1 = c.tokens[1].categorical_roles.at(kLatentScheme);
    EXPECT_NE(r0, r1);
    first_r0 += r0 == "r0";
  }
  // Chi-square with one degree of freedom below 10.83 (p = 0.001).
  const double n = 10000, e0 = 0.7 * n, e1 = 0.3 * n, o0 = first_r0, o1 = n - o0;
  EXPECT_LT((o0 - e0) * (o0 - e0) / e0 + (o1 - e1) * (o1 - e1) / e1, 10.83);
}

TEST(Generate, FullApplicabilityAndSubjectConstraint) {
  auto m = point_mass_model();
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t p = 0; p < 2; ++p) m.eta(r, p) = 1.0 - kEtaFloor;
  const std::vector<double> arity{0.5, 0.5};
  GenerateReport rep;
  auto corpus = generate(m, 2000, arity, 6, &rep);
  EXPECT_EQ(rep.skipped, 0u);
  std::size_t applicable = 0, total = 0;
  for (const auto& c : corpus.clauses) {
    EXPECT_LE(clause_signature(c)[0], 1);
    for (const auto& t : c.tokens)
      for (const auto& r : t.ratings) {
        applicable += r.applicable;
        ++total;
      }
  }
  EXPECT_GE(static_cast<double>(applicable), 0.999 * static_cast<double>(total));
  EXPECT_EQ(corpus.role_schemes, std::vector<std::string>{kLatentScheme});
}

TEST(Generate, DegenerateCouplingsAbort) {
  auto m = point_mass_model();
  m.psi(0, 0) = m.psi(1, 0) = 50.0;
  PairwiseCoupling d;
  d.set(0, 0, 50.0);
  m.set_delta(d);
  const std::vector<double> arity{0.0, 1.0};
  EXPECT_THROW(generate(m, 100, arity, 1), ConfigError);
}

TEST(Fit, AscendsAndIsDeterministic) {
  SyntheticSpec spec;
  spec.n_verbs = 8;
  spec.seed = 3;
  auto truth = synthetic_model(spec);
  const std::vector<double> arity{0.3, 0.5, 0.2};
  auto corpus = generate(truth, 150, arity, 4);
  SprolimConfig cfg;
  cfg.max_epochs = 30;
  cfg.seed = 9;
  auto a = fit(corpus, cfg);
  EXPECT_GE(a.objective.back(), a.objective.front());
  EXPECT_EQ(a.objective.size(), a.epochs + 1);
  EXPECT_EQ(a.loglik, a.objective.back());
  EXPECT_EQ(a.n_params, a.model.num_free_parameters());
  EXPECT_DOUBLE_EQ(a.aic_value, aic(a.loglik, a.n_params));
  for (auto [o, len] : a.model.simplex_rows()) {
    double s = 0.0;
    for (std::size_t i = 0; i < len; ++i) s += a.model.values()[o + i];
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  cfg.jobs = 3;
  auto b = fit(corpus, cfg);
  EXPECT_EQ(std::vector<double>(a.model.values().begin(), a.model.values().end()),
            std::vector<double>(b.model.values().begin(), b.model.values().end()));
  EXPECT_EQ(a.objective, b.objective);
  EXPECT_THROW(fit(Corpus{}, cfg), ConfigError);
}

TEST(Fit, SelectRolesStopsAtFirstAicIncrease) {
  SyntheticSpec spec;
  spec.n_verbs = 6;
  spec.n_roles = 1;
  spec.seed = 11;
  auto truth = synthetic_model(spec);
  const std::vector<double> arity{0.5, 0.5};
  auto corpus = generate(truth, 120, arity, 12);
  SprolimConfig cfg;
  cfg.max_epochs = 40;
  cfg.restarts = 1;
  cfg.max_roles = 4;
  auto sel = select_roles(corpus, cfg);
  ASSERT_GE(sel.fits.size(), 2u);
  const auto k = sel.selected_roles;
  EXPECT_EQ(sel.selected().model.n_roles(), k);
  if (sel.fits.size() < cfg.max_roles) {
    EXPECT_EQ(sel.fits.size(), k + 1);
    EXPECT_GT(sel.fits[k].aic_value, sel.fits[k - 1].aic_value);
  }
  for (std::size_t i = 1; i + 1 < sel.fits.size(); ++i)
    EXPECT_LE(sel.fits[i].aic_value, sel.fits[i - 1].aic_value);
}

TEST(Serialization, ModelRoundTrip) {
  Rng rng(27);
  auto corpus = small_corpus(rng, 3);
  corpus.clauses.push_back(make_clause("eat", {Subject}, {{1, 2, 3}}, "extra"));
  corpus.rebuild_index();
  auto m = SprolimModel::for_corpus(corpus, 2, 4, 2);
  random_interior(m, rng);
  auto j = model_to_json(m);
  auto back = model_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(std::vector<double>(back.values().begin(), back.values().end()),
            std::vector<double>(m.values().begin(), m.values().end()));
  EXPECT_EQ(back.properties(), m.properties());
  EXPECT_EQ(corpus_loglik(corpus, back), corpus_loglik(corpus, m));
  j["format"] = "protorole.sprolim/0";
  EXPECT_THROW(model_from_json(j), ConfigError);
}

TEST(Serialization, HeatmapLayout) {
  SprolimModel m(3, {"volition", "sentient"}, 4, {{"v", 1, {1}}}, {});
  m.mu(2, 1) = 0.125;
  std::ostringstream out;
  write_role_matrix(out, m);
  EXPECT_EQ(out.str(), "property\trole_1\trole_2\trole_3\nvolition\t0\t0\t0\nsentient\t0\t0\t0.125\n");
  std::ostringstream psi;
  write_psi_matrix(psi, m);
  const std::string text = psi.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
}

}  // namespace
}  // namespace protorole
