// protorole: command-line front end.
//
//   protorole ingest <corpus.tsv> --out DIR
//   protorole experiment <corpus.tsv> --family local-featural --out DIR
//   protorole sprolim fit|select <corpus.tsv> --out DIR
//   protorole generate --out DIR
//
// Exit codes: 0 success, 2 input error, 3 configuration or annotation
// error, 4 numerical failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "protorole/protorole.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace protorole;

namespace {

enum ExitCode { kOk = 0, kInputError = 2, kConfigError = 3, kNumericalError = 4 };

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Values shared by every subcommand. Anything left unset on the command line
// may come from the --config document.
struct Options {
  std::string config_path;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  std::string input;
  std::string output;
  std::size_t arity_cap = 4;

  // experiment
  std::string family;
  std::string scheme;
  std::vector<double> alpha_grid = {0.01, 0.1, 1, 2, 5, 10};
  std::size_t outer_folds = 10;
  std::size_t inner_folds = 10;
  std::size_t max_epochs = 5000;

  // sprolim
  std::size_t n_roles = 2;
  std::size_t restarts = 3;
  std::size_t epochs = 1000;
  std::size_t max_roles = 10;
  double learning_rate = 0.1;
  double tol = 1e-6;
  std::size_t min_phi_count = 2;
  std::optional<std::uint64_t> sprolim_seed;

  // generate
  std::size_t clauses = 2000;
  std::size_t gen_roles = 2;
  std::size_t props = 6;
  std::size_t verbs = 50;
  std::size_t max_types = 3;
  std::vector<double> arity_probs = {0.3, 0.5, 0.2};
};

// Top-level and nested keys accepted in a --config document.
const std::vector<std::string> kTopKeys = {"input",       "output",      "seed",       "jobs",
                                           "arity_cap",   "family",      "scheme",     "alpha_grid",
                                           "outer_folds", "inner_folds", "max_epochs", "sprolim",
                                           "generate"};
const std::vector<std::string> kSprolimKeys = {"n_roles",       "select", "restarts", "seed", "epochs",
                                               "max_roles",     "learning_rate", "tol",
                                               "min_phi_count"};
const std::vector<std::string> kGenerateKeys = {"clauses", "roles", "props", "verbs", "max_types",
                                                "arity_probs"};

void reject_unknown(const json& obj, const std::vector<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : obj.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError("unknown config key '" + where + key + "'");
}

class ConfigMerger {
 public:
  ConfigMerger(const CLI::App& app, json doc) : app_(app), doc_(std::move(doc)) {}

  // Fills `target` from doc[section][key] unless `flag` was given explicitly.
  template <class T>
  void take(const std::string& flag, T& target, const std::string& key, const char* section = nullptr) {
    if (given(flag)) return;
    const json* obj = &doc_;
    if (section) {
      if (!doc_.contains(section)) return;
      obj = &doc_.at(section);
    }
    if (!obj->contains(key)) return;
    try {
      target = obj->at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }

  const json& doc() const { return doc_; }

 private:
  bool given(const std::string& flag) const {
    for (const auto* sub : app_.get_subcommands()) {
      if (auto* opt = find(sub, flag); opt && opt->count() > 0) return true;
      for (const auto* nested : sub->get_subcommands())
        if (auto* opt = find(nested, flag); opt && opt->count() > 0) return true;
    }
    auto* opt = find(&app_, flag);
    return opt && opt->count() > 0;
  }
  static const CLI::Option* find(const CLI::App* app, const std::string& flag) {
    try {
      return app->get_option(flag);
    } catch (const CLI::OptionNotFound&) {
      return nullptr;
    }
  }

  const CLI::App& app_;
  json doc_;
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError("config file " + path + ": " + e.what());
  }
  reject_unknown(doc, kTopKeys, "");
  if (doc.contains("sprolim")) reject_unknown(doc["sprolim"], kSprolimKeys, "sprolim.");
  if (doc.contains("generate")) reject_unknown(doc["generate"], kGenerateKeys, "generate.");
  return doc;
}

void apply_config(const CLI::App& app, Options& o) {
  ConfigMerger m(app, load_config(o.config_path));
  m.take("--seed", o.seed, "seed");
  m.take("--jobs", o.jobs, "jobs");
  m.take("input", o.input, "input");
  m.take("--out", o.output, "output");
  m.take("--arity-cap", o.arity_cap, "arity_cap");
  m.take("--family", o.family, "family");
  m.take("--scheme", o.scheme, "scheme");
  m.take("--alpha-grid", o.alpha_grid, "alpha_grid");
  m.take("--outer-folds", o.outer_folds, "outer_folds");
  m.take("--inner-folds", o.inner_folds, "inner_folds");
  m.take("--max-epochs", o.max_epochs, "max_epochs");
  m.take("--roles", o.n_roles, "n_roles", "sprolim");
  m.take("--restarts", o.restarts, "restarts", "sprolim");
  m.take("--epochs", o.epochs, "epochs", "sprolim");
  m.take("--max-roles", o.max_roles, "max_roles", "sprolim");
  m.take("--learning-rate", o.learning_rate, "learning_rate", "sprolim");
  m.take("--tol", o.tol, "tol", "sprolim");
  m.take("--min-phi-count", o.min_phi_count, "min_phi_count", "sprolim");
  if (m.doc().contains("sprolim") && m.doc()["sprolim"].contains("seed"))
    o.sprolim_seed = m.doc()["sprolim"]["seed"].get<std::uint64_t>();
  m.take("--clauses", o.clauses, "clauses", "generate");
  m.take("--roles", o.gen_roles, "roles", "generate");
  m.take("--props", o.props, "props", "generate");
  m.take("--verbs", o.verbs, "verbs", "generate");
  m.take("--max-types", o.max_types, "max_types", "generate");
  m.take("--arity-probs", o.arity_probs, "arity_probs", "generate");
}

// ---------------------------------------------------------------------------
// File helpers. Outputs are rendered into memory and written in one go.

fs::path output_dir(const Options& o) {
  if (o.output.empty()) throw ConfigError("no output directory (use --out or the 'output' config key)");
  fs::path dir(o.output);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_file(path, j.dump(2) + "\n"); }

Corpus read_corpus(const Options& o, IngestReport* report = nullptr) {
  if (o.input.empty()) throw ConfigError("no input corpus given");
  std::ifstream in(o.input);
  if (!in) throw InputError("cannot open input file " + o.input);
  IngestReport rep;
  auto corpus = ingest(in, IngestConfig{o.arity_cap}, &rep);
  for (const auto& w : rep.warnings) spdlog::warn("{}", w);
  spdlog::info("read {} clauses ({} rows) from {}", corpus.clauses.size(), rep.rows_read, o.input);
  if (report) *report = rep;
  return corpus;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_ingest(const Options& o) {
  IngestReport rep;
  auto corpus = read_corpus(o, &rep);
  const auto dir = output_dir(o);
  std::ostringstream tsv;
  write_corpus(tsv, corpus);
  write_file(dir / "corpus.tsv", tsv.str());

  json positions = json::object(), labels = json::object(), signatures = json::object();
  for (auto p : kPositions) {
    positions[std::string(position_name(p))] = 0;
    labels[std::string(gram_func_label(p))] = 0;
  }
  labels["iobj"] = 0;
  for (const auto& c : corpus.clauses) {
    for (const auto& t : c.tokens) {
      positions[std::string(position_name(t.position))] = positions[std::string(position_name(t.position))].get<long>() + 1;
      labels[std::string(gram_func_label(t.position))] = labels[std::string(gram_func_label(t.position))].get<long>() + 1;
    }
    const auto key = signature_key(clause_signature(c));
    signatures[key] = signatures.value(key, 0L) + 1;
  }
  json summary = {{"input", o.input},
                  {"rows_read", rep.rows_read},
                  {"rows_dropped_label", rep.rows_dropped_label},
                  {"iobj_relabeled", rep.iobj_relabeled},
                  {"arity_cap", o.arity_cap},
                  {"clauses", corpus.clauses.size()},
                  {"arguments", corpus.num_tokens()},
                  {"verbs", corpus.verb_index.size()},
                  {"clauses_dropped_arity", rep.clauses_dropped_arity},
                  {"clauses_dropped_duplicate_subject", rep.clauses_dropped_duplicate_subject},
                  {"position_counts", positions},
                  {"gram_func_counts", labels},
                  {"signature_counts", signatures},
                  {"properties", corpus.properties},
                  {"role_schemes", corpus.role_schemes},
                  {"warnings", rep.warnings}};
  write_json(dir / "summary.json", summary);
  std::cout << summary.dump(2) << '\n';
  return kOk;
}

int cmd_experiment(const Options& o) {
  if (o.family.empty()) throw ConfigError("no model family (use --family)");
  const auto family = ModelFamily::parse(o.family, o.scheme);
  auto corpus = read_corpus(o);
  CvPlan plan;
  plan.outer_folds = o.outer_folds;
  plan.inner_folds = o.inner_folds;
  plan.alpha_grid = o.alpha_grid;
  plan.seed = o.seed;
  plan.jobs = o.jobs;
  plan.fit.max_epochs = o.max_epochs;
  plan.fit.arity_cap = o.arity_cap;
  for (double a : plan.alpha_grid)
    if (!(a > 0)) throw ConfigError("alpha grid values must be positive");
  spdlog::info("nested cross-validation: {} on {} clauses", family.name(), corpus.clauses.size());
  const auto report = nested_cv(corpus, family, plan);
  if (report.skipped_clauses)
    spdlog::warn("{} clauses skipped for lacking '{}' annotations", report.skipped_clauses, family.scheme);
  const auto dir = output_dir(o);
  json j = report;
  j["seed"] = o.seed;
  write_json(dir / "report.json", j);
  std::ostringstream summary, coef;
  write_summary_tsv(summary, report);
  write_coefficients_tsv(coef, report);
  write_file(dir / "summary.tsv", summary.str());
  write_file(dir / "coefficients.tsv", coef.str());
  std::cout << summary.str();
  return kOk;
}

SprolimConfig sprolim_config(const Options& o) {
  if (o.n_roles == 0 || o.max_roles == 0) throw ConfigError("role counts must be positive");
  if (!(o.learning_rate > 0) || !(o.tol > 0)) throw ConfigError("learning rate and tolerance must be positive");
  SprolimConfig c;
  c.n_roles = o.n_roles;
  c.arity_cap = o.arity_cap;
  c.learning_rate = o.learning_rate;
  c.max_epochs = o.epochs;
  c.tol = o.tol;
  c.seed = o.sprolim_seed.value_or(o.seed);
  c.restarts = o.restarts;
  c.max_roles = o.max_roles;
  c.min_phi_count = o.min_phi_count;
  c.jobs = o.jobs;
  return c;
}

void write_model_exports(const fs::path& dir, const SprolimFit& f) {
  write_json(dir / "model.json", fit_to_json(f));
  std::ostringstream m, e, psi;
  write_role_matrix(m, f.model);
  write_role_matrix(e, f.model, true);
  write_psi_matrix(psi, f.model);
  write_file(dir / "centroids.tsv", m.str());
  write_file(dir / "applicability.tsv", e.str());
  write_file(dir / "psi.tsv", psi.str());
}

std::string aic_row(const SprolimFit& f, bool selected) {
  return std::to_string(f.model.n_roles()) + '\t' + fmt_double(f.loglik) + '\t' + std::to_string(f.n_params) +
         '\t' + fmt_double(f.aic_value) + '\t' + (selected ? "1" : "0") + '\n';
}

constexpr const char* kAicHeader = "roles\tloglik\tn_params\taic\tselected\n";

int cmd_sprolim(const Options& o, bool select) {
  auto corpus = read_corpus(o);
  const auto config = sprolim_config(o);
  const auto dir = output_dir(o);
  try {
    if (!select) {
      spdlog::info("fitting {} roles ({} restarts)", config.n_roles, config.restarts);
      auto f = fit_with_restarts(corpus, config);
      write_model_exports(dir, f);
      write_file(dir / "aic.tsv", std::string(kAicHeader) + aic_row(f, true));
      std::cout << kAicHeader << aic_row(f, true);
      return kOk;
    }
    spdlog::info("selecting the role count (up to {})", config.max_roles);
    auto sel = select_roles(corpus, config);
    fs::create_directories(dir / "models");
    std::string table = kAicHeader;
    for (const auto& f : sel.fits) {
      table += aic_row(f, f.model.n_roles() == sel.selected_roles);
      write_json(dir / "models" / ("roles_" + std::to_string(f.model.n_roles()) + ".json"), fit_to_json(f));
    }
    write_model_exports(dir, sel.selected());
    write_file(dir / "aic.tsv", table);
    std::cout << table;
    return kOk;
  } catch (const NumericalError& e) {
    write_json(dir / "diagnostics.json",
               {{"error", e.what()}, {"epoch", e.epoch()}, {"clause_id", e.clause_id()}, {"seed", config.seed}});
    throw;
  }
}

int cmd_generate(const Options& o) {
  SyntheticSpec spec;
  spec.n_roles = o.gen_roles;
  spec.n_props = o.props;
  spec.n_verbs = o.verbs;
  spec.max_types = o.max_types;
  spec.arity_cap = o.arity_cap;
  spec.seed = o.seed;
  if (spec.n_roles == 0 || spec.n_props == 0 || spec.n_verbs == 0 || spec.max_types == 0)
    throw ConfigError("generate: sizes must be positive");
  for (double p : o.arity_probs)
    if (p < 0) throw ConfigError("generate: arity probabilities must be nonnegative");
  const auto truth = synthetic_model(spec);
  GenerateReport rep;
  const auto corpus = generate(truth, o.clauses, o.arity_probs, derive_seed(o.seed, 1), &rep);
  if (rep.skipped) spdlog::warn("{} clauses skipped by the subject constraint", rep.skipped);
  const auto dir = output_dir(o);
  std::ostringstream tsv;
  write_corpus(tsv, corpus);
  write_file(dir / "corpus.tsv", tsv.str());
  auto truth_json = model_to_json(truth);
  truth_json["generator"] = {{"seed", o.seed}, {"clauses", o.clauses}, {"skipped", rep.skipped},
                             {"arity_probs", o.arity_probs}};
  write_json(dir / "truth.json", truth_json);
  std::cout << corpus.clauses.size() << " clauses written to " << (dir / "corpus.tsv").string() << '\n';
  return kOk;
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("protorole");
  logger->set_pattern("%^[%l]%$ %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("PROTOROLE_LOG")) spdlog::set_level(spdlog::level::from_str(env));
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  Options o;
  CLI::App app{"Linking-theory evaluation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  app.add_option("--config", o.config_path, "JSON run configuration; command-line flags take precedence");
  app.add_option("--seed", o.seed, "Random seed")->capture_default_str();
  app.add_option("--jobs", o.jobs, "Worker threads (results do not depend on this)")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  auto add_io = [&](CLI::App* sub) {
    sub->add_option("input", o.input, "Corpus TSV");
    sub->add_option("--out", o.output, "Output directory");
    sub->add_option("--arity-cap", o.arity_cap, "Drop clauses with more arguments")
        ->capture_default_str()
        ->check(CLI::Range(1, static_cast<int>(kMaxEnumeratedArity)));
  };

  auto* ingest_cmd = app.add_subcommand("ingest", "Normalize a corpus and summarize its counts");
  add_io(ingest_cmd);

  auto* exp_cmd = app.add_subcommand("experiment", "Nested cross-validation of a supervised linker");
  add_io(exp_cmd);
  exp_cmd->add_option("--family", o.family,
                      "local-featural, local-categorical, global-featural or global-categorical");
  exp_cmd->add_option("--scheme", o.scheme, "Role scheme for categorical families (e.g. propbank, verbnet)");
  exp_cmd->add_option("--alpha-grid", o.alpha_grid, "L2 strengths searched by the inner loop")
      ->delimiter(',')
      ->capture_default_str();
  exp_cmd->add_option("--outer-folds", o.outer_folds)->capture_default_str()->check(CLI::PositiveNumber);
  exp_cmd->add_option("--inner-folds", o.inner_folds)->capture_default_str()->check(CLI::PositiveNumber);
  exp_cmd->add_option("--max-epochs", o.max_epochs, "AdaGrad epoch limit per fit")->capture_default_str();

  auto* spr_cmd = app.add_subcommand("sprolim", "Fit the latent proto-role model");
  spr_cmd->require_subcommand(1);
  auto add_sprolim = [&](CLI::App* sub) {
    add_io(sub);
    sub->add_option("--restarts", o.restarts, "Random restarts per role count")->capture_default_str();
    sub->add_option("--epochs", o.epochs, "Epoch limit per fit")->capture_default_str();
    sub->add_option("--learning-rate", o.learning_rate)->capture_default_str();
    sub->add_option("--tol", o.tol, "Relative objective change that stops a fit")->capture_default_str();
    sub->add_option("--min-phi-count", o.min_phi_count,
                    "Clauses needed before a (verb, arity) pair gets its own alignment distribution")
        ->capture_default_str();
  };
  auto* fit_cmd = spr_cmd->add_subcommand("fit", "Fit one role count");
  add_sprolim(fit_cmd);
  fit_cmd->add_option("--roles", o.n_roles, "Number of latent roles")->capture_default_str();
  auto* select_cmd = spr_cmd->add_subcommand("select", "Fit increasing role counts until AIC rises");
  add_sprolim(select_cmd);
  select_cmd->add_option("--max-roles", o.max_roles)->capture_default_str();

  auto* gen_cmd = app.add_subcommand("generate", "Sample a synthetic corpus from a random model");
  gen_cmd->add_option("--out", o.output, "Output directory");
  gen_cmd->add_option("--arity-cap", o.arity_cap)->capture_default_str();
  gen_cmd->add_option("--clauses", o.clauses)->capture_default_str();
  gen_cmd->add_option("--roles", o.gen_roles)->capture_default_str();
  gen_cmd->add_option("--props", o.props)->capture_default_str();
  gen_cmd->add_option("--verbs", o.verbs)->capture_default_str();
  gen_cmd->add_option("--max-types", o.max_types, "Argument types per verb drawn from 1..N")->capture_default_str();
  gen_cmd->add_option("--arity-probs", o.arity_probs, "Clause arity distribution, arity 1 first")
      ->delimiter(',')
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    apply_config(app, o);
    if (ingest_cmd->parsed()) return cmd_ingest(o);
    if (exp_cmd->parsed()) return cmd_experiment(o);
    if (gen_cmd->parsed()) return cmd_generate(o);
    const bool select = select_cmd->parsed();
    const json doc = load_config(o.config_path);
    if (doc.contains("sprolim") && doc["sprolim"].contains("select") &&
        doc["sprolim"]["select"].get<bool>() != select)
      throw ConfigError("config 'sprolim.select' disagrees with the chosen subcommand");
    return cmd_sprolim(o, select);
  } catch (const ParseError& e) {
    spdlog::error("{}", e.what());
    return kInputError;
  } catch (const InputError& e) {
    spdlog::error("{}", e.what());
    return kInputError;
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kConfigError;
  } catch (const NumericalError& e) {
    spdlog::error("{}", e.what());
    return kNumericalError;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
