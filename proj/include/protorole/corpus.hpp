#pragma once

// Data model and ingestion for property-rating corpora annotated with
// syntactic positions and (optionally) categorical role labels.
//
// Input is long format: one tab-separated row per (argument, property).
// Rows are pivoted into per-token rating vectors aligned with the corpus
// property inventory, and tokens are grouped into clauses keyed by
// (sentence_id, pred_idx).

#include <algorithm>
#include <array>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace protorole {

enum class SyntacticPosition : std::uint8_t { Subject = 0, Object = 1, Oblique = 2 };

inline constexpr std::size_t kNumPositions = 3;
inline constexpr std::array<SyntacticPosition, kNumPositions> kPositions = {
    SyntacticPosition::Subject, SyntacticPosition::Object, SyntacticPosition::Oblique};

constexpr std::size_t index_of(SyntacticPosition p) { return static_cast<std::size_t>(p); }

constexpr std::string_view position_name(SyntacticPosition p) {
  switch (p) {
    case SyntacticPosition::Subject: return "subject";
    case SyntacticPosition::Object: return "object";
    case SyntacticPosition::Oblique: return "oblique";
  }
  return "?";
}

/// Canonical dependency label written on export.
constexpr std::string_view gram_func_label(SyntacticPosition p) {
  switch (p) {
    case SyntacticPosition::Subject: return "nsubj";
    case SyntacticPosition::Object: return "dobj";
    case SyntacticPosition::Oblique: return "nmod";
  }
  return "?";
}

/// Maps a UD dependency label to a position; iobj collapses onto Object.
/// Returns nullopt for labels outside the core set.
inline std::optional<SyntacticPosition> position_from_label(std::string_view label) {
  if (label == "nsubj") return SyntacticPosition::Subject;
  if (label == "dobj" || label == "iobj") return SyntacticPosition::Object;
  if (label == "nmod") return SyntacticPosition::Oblique;
  return std::nullopt;
}

struct PropertyRating {
  bool applicable = false;
  std::optional<int> likelihood;  // present iff applicable

  static PropertyRating not_applicable() { return {}; }
  static PropertyRating rated(int l) {
    if (l < 1 || l > 5) throw std::invalid_argument("likelihood must be in 1..5");
    return {true, l};
  }

  friend bool operator==(const PropertyRating&, const PropertyRating&) = default;
};

/// a * l, with non-applicable ratings mapped to 0.
constexpr int combined_rating(const PropertyRating& r) {
  return r.applicable ? *r.likelihood : 0;
}

struct ArgumentToken {
  std::string token_id;
  SyntacticPosition position = SyntacticPosition::Subject;
  std::vector<PropertyRating> ratings;  // aligned with Corpus::properties
  std::map<std::string, std::string> categorical_roles;

  friend bool operator==(const ArgumentToken&, const ArgumentToken&) = default;
};

struct Clause {
  std::string sentence_id;
  std::string pred_idx;
  std::string verb;
  std::vector<ArgumentToken> tokens;  // surface order

  std::string clause_id() const { return sentence_id + "#" + pred_idx; }
  std::size_t arity() const { return tokens.size(); }

  friend bool operator==(const Clause&, const Clause&) = default;
};

/// Position counts in canonical order (subject, object, oblique).
using ClauseSignature = std::array<int, kNumPositions>;

inline ClauseSignature clause_signature(const Clause& c) {
  ClauseSignature sig{};
  for (const auto& t : c.tokens) ++sig[index_of(t.position)];
  return sig;
}

/// Canonical text form of a signature, e.g. "subject:1,object:1".
inline std::string signature_key(const ClauseSignature& sig) {
  std::string out;
  for (auto p : kPositions) {
    if (sig[index_of(p)] == 0) continue;
    if (!out.empty()) out += ',';
    out += position_name(p);
    out += ':';
    out += std::to_string(sig[index_of(p)]);
  }
  return out.empty() ? "empty" : out;
}

struct Corpus {
  std::vector<Clause> clauses;
  std::vector<std::string> properties;
  std::vector<std::string> role_schemes;  // sorted
  std::map<std::string, std::vector<std::size_t>> verb_index;

  void rebuild_index() {
    verb_index.clear();
    for (std::size_t i = 0; i < clauses.size(); ++i) verb_index[clauses[i].verb].push_back(i);
  }

  std::size_t num_tokens() const {
    std::size_t n = 0;
    for (const auto& c : clauses) n += c.tokens.size();
    return n;
  }

  bool has_scheme(std::string_view scheme) const {
    for (const auto& s : role_schemes)
      if (s == scheme) return true;
    return false;
  }

  /// Same properties and schemes, restricted to the given clause indices.
  Corpus subset(const std::vector<std::size_t>& idx) const {
    Corpus out;
    out.properties = properties;
    out.role_schemes = role_schemes;
    out.clauses.reserve(idx.size());
    for (auto i : idx) out.clauses.push_back(clauses.at(i));
    out.rebuild_index();
    return out;
  }

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct IngestConfig {
  std::size_t arity_cap = 4;
};

struct IngestReport {
  std::size_t rows_read = 0;
  std::size_t rows_dropped_label = 0;
  std::size_t iobj_relabeled = 0;
  std::size_t clauses_dropped_arity = 0;
  std::size_t clauses_dropped_duplicate_subject = 0;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::optional<long> parse_long(std::string_view s) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace detail

/// Parses a long-format rating stream. Rows whose dependency label is not a
/// core label are dropped; clauses over the arity cap or with two subjects
/// are dropped and counted in `report`.
inline Corpus ingest(std::istream& in, const IngestConfig& config = {},
                     IngestReport* report = nullptr) {
  static constexpr std::array<std::string_view, 8> kRequired = {
      "sentence_id", "pred_idx", "arg_idx", "verb", "gram_func", "property", "applicable",
      "likelihood"};
  IngestReport local_report;
  IngestReport& rep = report ? *report : local_report;
  rep = IngestReport{};

  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError(0, "empty input: missing header row");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = detail::split_tabs(line);
  std::map<std::string, std::size_t, std::less<>> col;
  for (std::size_t i = 0; i < header.size(); ++i) col.emplace(std::string(header[i]), i);
  for (auto name : kRequired)
    if (!col.contains(name)) throw ParseError(1, "missing required column '" + std::string(name) + "'");
  std::vector<std::pair<std::string, std::size_t>> scheme_cols;
  for (std::size_t i = 0; i < header.size(); ++i) {
    std::string_view h = header[i];
    if (h.size() > 5 && h.substr(h.size() - 5) == "_role")
      scheme_cols.emplace_back(std::string(h.substr(0, h.size() - 5)), i);
  }
  std::sort(scheme_cols.begin(), scheme_cols.end());

  struct PendingToken {
    long arg_idx;
    SyntacticPosition position;
    std::map<std::size_t, PropertyRating> ratings;
    std::map<std::string, std::string> roles;
    std::size_t first_line;
  };
  struct PendingClause {
    std::string sentence_id, pred_idx, verb;
    std::map<long, PendingToken> tokens;
    std::size_t first_line;
  };
  std::vector<PendingClause> pending;
  std::map<std::pair<std::string, std::string>, std::size_t> clause_lookup;
  std::vector<std::string> properties;
  std::map<std::string, std::size_t, std::less<>> property_lookup;

  const std::size_t ncols = header.size();
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++rep.rows_read;
    auto f = detail::split_tabs(line);
    if (f.size() != ncols)
      throw ParseError(lineno, "expected " + std::to_string(ncols) + " columns, found " +
                                   std::to_string(f.size()));
    auto field = [&](std::string_view name) { return f[col.find(name)->second]; };

    auto label = field("gram_func");
    auto position = position_from_label(label);
    if (!position) {
      ++rep.rows_dropped_label;
      continue;
    }
    if (label == "iobj") ++rep.iobj_relabeled;

    auto applicable = field("applicable");
    if (applicable != "0" && applicable != "1")
      throw ParseError(lineno, "applicable must be 0 or 1, got '" + std::string(applicable) + "'");
    auto lik_text = field("likelihood");
    std::optional<long> lik;
    if (!lik_text.empty()) {
      lik = detail::parse_long(lik_text);
      if (!lik || *lik < 1 || *lik > 5)
        throw ParseError(lineno, "likelihood must be in 1..5, got '" + std::string(lik_text) + "'");
    }
    PropertyRating rating;
    if (applicable == "1") {
      if (!lik) throw ParseError(lineno, "likelihood required when applicable=1");
      rating = PropertyRating::rated(static_cast<int>(*lik));
    }

    auto arg_idx = detail::parse_long(field("arg_idx"));
    if (!arg_idx) throw ParseError(lineno, "arg_idx must be an integer");
    std::string sentence_id(field("sentence_id"));
    std::string pred_idx(field("pred_idx"));
    std::string verb(field("verb"));
    if (sentence_id.empty() || pred_idx.empty() || verb.empty())
      throw ParseError(lineno, "sentence_id, pred_idx and verb must be nonempty");

    auto key = std::make_pair(sentence_id, pred_idx);
    auto [cit, fresh] = clause_lookup.emplace(key, pending.size());
    if (fresh) pending.push_back({sentence_id, pred_idx, verb, {}, lineno});
    auto& clause = pending[cit->second];
    if (clause.verb != verb)
      throw ParseError(lineno, "verb '" + verb + "' conflicts with '" + clause.verb +
                                   "' for the same predicate");

    std::map<std::string, std::string> roles;
    for (const auto& [scheme, idx] : scheme_cols)
      if (!f[idx].empty()) roles.emplace(scheme, std::string(f[idx]));

    auto [tit, tfresh] = clause.tokens.try_emplace(*arg_idx);
    auto& token = tit->second;
    if (tfresh) {
      token.arg_idx = *arg_idx;
      token.position = *position;
      token.roles = roles;
      token.first_line = lineno;
    } else {
      if (token.position != *position)
        throw ParseError(lineno, "conflicting gram_func for argument " + std::to_string(*arg_idx));
      if (token.roles != roles)
        throw ParseError(lineno, "conflicting role labels for argument " + std::to_string(*arg_idx));
    }

    std::string prop(field("property"));
    if (prop.empty()) throw ParseError(lineno, "empty property name");
    auto [pit, pfresh] = property_lookup.emplace(prop, properties.size());
    if (pfresh) properties.push_back(prop);
    if (!token.ratings.emplace(pit->second, rating).second)
      throw ParseError(lineno, "duplicate rating for property '" + prop + "'");
  }

  Corpus corpus;
  corpus.properties = properties;
  for (const auto& [scheme, idx] : scheme_cols) corpus.role_schemes.push_back(scheme);
  for (auto& pc : pending) {
    Clause clause{pc.sentence_id, pc.pred_idx, pc.verb, {}};
    int subjects = 0;
    for (auto& [arg, pt] : pc.tokens) {
      if (pt.ratings.size() != properties.size()) {
        for (std::size_t p = 0; p < properties.size(); ++p)
          if (!pt.ratings.contains(p))
            throw ParseError(pt.first_line, "argument " + std::to_string(arg) +
                                                " is missing a rating for property '" +
                                                properties[p] + "'");
      }
      ArgumentToken tok;
      tok.token_id = std::to_string(arg);
      tok.position = pt.position;
      tok.categorical_roles = std::move(pt.roles);
      tok.ratings.reserve(properties.size());
      for (auto& [p, r] : pt.ratings) tok.ratings.push_back(r);
      if (tok.position == SyntacticPosition::Subject) ++subjects;
      clause.tokens.push_back(std::move(tok));
    }
    if (clause.tokens.size() > config.arity_cap) {
      ++rep.clauses_dropped_arity;
      rep.warnings.push_back("dropped clause " + clause.clause_id() + " with arity " +
                             std::to_string(clause.tokens.size()) + " above cap " +
                             std::to_string(config.arity_cap));
      continue;
    }
    if (subjects > 1) {
      ++rep.clauses_dropped_duplicate_subject;
      rep.warnings.push_back("dropped clause " + clause.clause_id() + " with " +
                             std::to_string(subjects) + " subjects");
      continue;
    }
    corpus.clauses.push_back(std::move(clause));
  }
  corpus.rebuild_index();
  return corpus;
}

/// Writes a corpus in the ingestion format; ingest(write_corpus(c)) == c.
inline void write_corpus(std::ostream& out, const Corpus& corpus) {
  out << "sentence_id\tpred_idx\targ_idx\tverb\tgram_func\tproperty\tapplicable\tlikelihood";
  for (const auto& s : corpus.role_schemes) out << '\t' << s << "_role";
  out << '\n';
  for (const auto& c : corpus.clauses) {
    for (const auto& t : c.tokens) {
      for (std::size_t p = 0; p < corpus.properties.size(); ++p) {
        const auto& r = t.ratings[p];
        out << c.sentence_id << '\t' << c.pred_idx << '\t' << t.token_id << '\t' << c.verb << '\t'
            << gram_func_label(t.position) << '\t' << corpus.properties[p] << '\t'
            << (r.applicable ? '1' : '0') << '\t';
        if (r.applicable) out << *r.likelihood;
        for (const auto& s : corpus.role_schemes) {
          out << '\t';
          if (auto it = t.categorical_roles.find(s); it != t.categorical_roles.end()) out << it->second;
        }
        out << '\n';
      }
    }
  }
}

}  // namespace protorole
