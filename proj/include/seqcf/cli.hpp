#pragma once

// The seqcf command line: one binary, one subcommand per pipeline stage.
// Exit codes: 0 success, 1 invalid input, 2 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "seqcf/cascade.hpp"
#include "seqcf/engine.hpp"
#include "seqcf/service.hpp"
#include "seqcf/synth.hpp"

namespace seqcf::cli {

namespace fs = std::filesystem;

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

inline LogLevel log_level_from_env() {
  const char* v = std::getenv("SEQCF_LOG");
  if (!v) return LogLevel::Warn;
  std::string s(v);
  if (s == "error") return LogLevel::Error;
  if (s == "info") return LogLevel::Info;
  if (s == "debug") return LogLevel::Debug;
  return LogLevel::Warn;
}

class Logger {
 public:
  Logger(std::ostream& err, LogLevel level) : err_(err), level_(level) {}
  void error(const std::string& m) const { emit(LogLevel::Error, "error", m); }
  void warn(const std::string& m) const { emit(LogLevel::Warn, "warn", m); }
  void info(const std::string& m) const { emit(LogLevel::Info, "info", m); }
  void debug(const std::string& m) const { emit(LogLevel::Debug, "debug", m); }

 private:
  void emit(LogLevel l, const char* tag, const std::string& m) const {
    if (l <= level_) err_ << "seqcf: " << tag << ": " << m << "\n";
  }
  std::ostream& err_;
  LogLevel level_;
};

struct Context {
  std::ostream& out;
  Logger log;
};

inline std::shared_ptr<const FeatureCatalog> catalog_arg(const std::string& path) {
  if (path.empty()) return std::make_shared<const FeatureCatalog>(default_catalog());
  return std::make_shared<const FeatureCatalog>(load_catalog(read_file(path)));
}

inline Cohort cohort_arg(const std::string& path, std::shared_ptr<const FeatureCatalog> cat,
                         const Logger& log) {
  auto cohort = load_cohort(read_file(path), std::move(cat), cohort_format_for_path(path));
  if (!cohort.missing_columns().empty()) {
    log.warn(std::to_string(cohort.missing_columns().size()) + " feature columns missing from " + path +
             "; defaulted to 0");
  }
  return cohort;
}

// JSON output with a trailing newline; files are replaced atomically.
inline void emit(Context& ctx, const std::string& out_path, const std::string& text) {
  if (out_path.empty()) {
    ctx.out << text;
  } else {
    write_file_atomic(out_path, text);
    ctx.log.info("wrote " + out_path);
  }
}

inline std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

inline fs::path calibration_path(const fs::path& cohort_out) {
  auto p = cohort_out;
  p.replace_extension(".calibration.json");
  return p;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> n;
};

inline SynthConfig synth_config_arg(const std::string& path) {
  if (path.empty()) return SynthConfig{};
  return synth_config_from_json(parse_json(read_file(path), path), SynthConfig{});
}

inline int cmd_synth(Context& ctx, const SynthArgs& a) {
  auto config = synth_config_arg(a.config);
  if (a.seed) config.seed = *a.seed;
  if (a.n) config.n_patients = *a.n;
  auto cat = std::make_shared<const FeatureCatalog>(default_catalog());
  auto cohort = generate(config, cat);
  auto report = validate_calibration(cohort, config);
  auto format = cohort_format_for_path(a.out);
  write_file_atomic(a.out, format == CohortFormat::Csv ? save_cohort_csv(cohort) : save_cohort_jsonl(cohort));
  write_file_atomic(calibration_path(a.out), dump(to_json(report)));
  ctx.out << "patients " << cohort.size() << ", cases " << cohort.n_cases() << ", calibration "
          << (report.pass() ? "PASS" : "FAIL") << "\n";
  for (const auto& c : report.checks) {
    if (!c.pass) ctx.log.warn("calibration check failed: " + c.name);
  }
  return 0;
}

struct BuildArgs {
  std::string config, out_dir;
  std::optional<std::uint64_t> seed;
  double gamma = 2.0;
  std::size_t min_support = 25;
  double regularization = 1.0;
};

// Writes the artifact directory the service expects.
inline int cmd_build(Context& ctx, const BuildArgs& a) {
  auto config = synth_config_arg(a.config);
  if (a.seed) config.seed = *a.seed;
  auto cat = std::make_shared<const FeatureCatalog>(default_catalog());
  auto cohort = generate(config, cat);
  GraphOptions go;
  go.gamma = a.gamma;
  go.min_support = a.min_support;
  auto graph = estimate_graph(cohort, go);
  TrainOptions to;
  to.regularization = a.regularization;
  to.seed = config.seed;
  auto model = train(cohort, to);
  fs::create_directories(a.out_dir);
  fs::path dir(a.out_dir);
  write_file_atomic(dir / "catalog.json", dump(cat->to_json()));
  write_file_atomic(dir / "cohort.csv", save_cohort_csv(cohort));
  write_file_atomic(dir / "graph.json", dump(to_json(graph, *cat)));
  write_file_atomic(dir / "model.json", dump(to_json(model)));
  ctx.out << "artifacts in " << a.out_dir << ": " << cohort.size() << " patients, " << graph.edges().size()
          << " edges\n";
  return 0;
}

struct GraphArgs {
  std::string cohort, catalog, out;
  double gamma = 2.0;
  std::size_t min_support = 25;
};

inline int cmd_graph(Context& ctx, const GraphArgs& a) {
  auto cat = catalog_arg(a.catalog);
  auto cohort = cohort_arg(a.cohort, cat, ctx.log);
  GraphOptions o;
  o.gamma = a.gamma;
  o.min_support = a.min_support;
  auto g = estimate_graph(cohort, o);
  std::size_t estimated = 0;
  for (const auto& e : g.edges()) estimated += e.source == EdgeSource::Estimated;
  if (estimated == 0) ctx.log.warn("no estimated edges passed the threshold and support filter");
  emit(ctx, a.out, dump(to_json(g, *cat)));
  return 0;
}

struct AuditArgs {
  std::string cohort, catalog, graph, out;
  bool json = false;
};

inline int cmd_audit(Context& ctx, const AuditArgs& a) {
  auto cat = catalog_arg(a.catalog);
  auto cohort = cohort_arg(a.cohort, cat, ctx.log);
  if (!a.graph.empty()) graph_from_json(parse_json(read_file(a.graph), a.graph), *cat);
  auto report = audit_naive(cohort);
  if (!a.out.empty()) emit(ctx, a.out, dump(to_json(report, *cat)));
  ctx.out << (a.json ? dump(to_json(report, *cat)) : render_text(report, *cat));
  return 0;
}

struct CascadeArgs {
  std::string cohort, catalog, out;
  bool json = false;
};

inline int cmd_cascade(Context& ctx, const CascadeArgs& a) {
  auto cat = catalog_arg(a.catalog);
  auto cohort = cohort_arg(a.cohort, cat, ctx.log);
  auto steps = cascade_report(cohort);
  auto profile = insulin_profile(cohort);
  if (!a.out.empty()) emit(ctx, a.out, dump(cascade_json(steps, profile, *cat)));
  ctx.out << (a.json ? dump(cascade_json(steps, profile, *cat)) : render_text(steps, profile, *cat));
  return 0;
}

struct TrainArgs {
  std::string cohort, catalog, out;
  double regularization = 1.0;
  std::size_t iterations = 500;
  double step_size = 0.1;
  std::uint64_t seed = 0;
  double holdout = 0.0;
};

inline int cmd_train(Context& ctx, const TrainArgs& a) {
  auto cat = catalog_arg(a.catalog);
  auto cohort = cohort_arg(a.cohort, cat, ctx.log);
  TrainOptions o{a.regularization, a.iterations, a.step_size, a.seed};
  if (a.holdout < 0 || a.holdout >= 1) throw ValidationError("holdout must lie in [0, 1)", "holdout");
  if (a.holdout > 0) {
    auto [tr, te] = split_cohort(cohort, a.seed, a.holdout);
    auto model = train(tr, o);
    ctx.out << "held-out AUROC " << auroc(model, te) << " (n = " << te.size() << ")\n";
    emit(ctx, a.out, dump(to_json(model)));
    return 0;
  }
  auto model = train(cohort, o);
  ctx.out << "training AUROC " << auroc(model, cohort) << "\n";
  emit(ctx, a.out, dump(to_json(model)));
  return 0;
}

struct ArtifactArgs {
  std::string cohort, catalog, graph, model;
  double epsilon = kDefaultEpsilon;
};

inline Snapshot snapshot_from_args(const ArtifactArgs& a, const Logger& log) {
  Snapshot s;
  s.catalog = catalog_arg(a.catalog);
  s.cohort = cohort_arg(a.cohort, s.catalog, log);
  s.graph = graph_from_json(parse_json(read_file(a.graph), a.graph), *s.catalog);
  s.model = risk_model_from_json(parse_json(read_file(a.model), a.model));
  if (s.model.dim() != s.catalog->size()) throw ValidationError("model does not match catalog", "model");
  s.epsilon = a.epsilon;
  return s;
}

struct CfArgs {
  ArtifactArgs artifacts;
  std::string patient, mode = "sequential", propagation = "deterministic", out;
  std::vector<std::string> interventions;
  double theta = 0.5;
  std::size_t samples = 200;
  std::uint64_t seed = 0;
  std::size_t max_changes = 5;
};

inline int cmd_cf(Context& ctx, const CfArgs& a) {
  auto snap = snapshot_from_args(a.artifacts, ctx.log);
  CfRequest req;
  req.patient_id = a.patient;
  req.mode = a.mode;
  req.theta = a.theta;
  req.propagation = a.propagation;
  req.samples = a.samples;
  req.seed = a.seed;
  req.max_changes = a.max_changes;
  for (const auto& s : a.interventions) {
    auto r = parse_intervention(*snap.catalog, s);
    req.interventions.push_back({snap.catalog->code(r.feature), std::string(to_string(r.period)),
                                 std::string(to_string(r.action))});
  }
  try {
    emit(ctx, a.out, dump(run_counterfactual(snap, req)));
  } catch (const NoCounterfactualError& e) {
    ctx.out << dump({{"error", {{"code", "no_counterfactual"}, {"message", e.what()}}}});
    ctx.log.error(e.what());
    return 1;
  }
  return 0;
}

struct SearchArgs {
  ArtifactArgs artifacts;
  std::string patient, propagation = "deterministic", out;
  std::size_t max_interventions = 2;
  std::size_t samples = 200;
  std::uint64_t seed = 0;
  std::size_t top = 10;
};

inline int cmd_search(Context& ctx, const SearchArgs& a) {
  auto snap = snapshot_from_args(a.artifacts, ctx.log);
  const auto& patient = snap.cohort.find(a.patient);
  auto pm = parse_propagation_mode(a.propagation);
  if (!pm) throw ValidationError("propagation must be deterministic or stochastic", "propagation");
  PropagationConfig c;
  c.mode = *pm;
  c.n_samples = a.samples;
  c.seed = a.seed;
  c.epsilon = snap.epsilon;
  auto ranked = search_interventions(*snap.catalog, snap.graph, snap.model, patient, c, a.max_interventions);
  nlohmann::json j = nlohmann::json::array();
  for (std::size_t k = 0; k < ranked.size() && k < a.top; ++k) {
    nlohmann::json e;
    e["interventions"] = nlohmann::json::array();
    for (const auto& r : ranked[k].interventions) e["interventions"].push_back(to_json(r, *snap.catalog));
    e["result"] = to_json(ranked[k].result, *snap.catalog);
    j.push_back(std::move(e));
  }
  emit(ctx, a.out, dump(j));
  return 0;
}

struct ServeArgs {
  std::string bind = "127.0.0.1:8080", artifacts, allow_origin, static_dir;
  double epsilon = kDefaultEpsilon;
};

inline int cmd_serve(Context& ctx, const ServeArgs& a) {
  auto colon = a.bind.rfind(':');
  if (colon == std::string::npos) throw ValidationError("--bind must be host:port", "bind");
  int port = 0;
  try {
    port = std::stoi(a.bind.substr(colon + 1));
  } catch (const std::exception&) {
    throw ValidationError("invalid port in --bind", "bind");
  }
  Service svc({a.allow_origin, a.static_dir});
  int bound = svc.bind(a.bind.substr(0, colon), port);
  if (bound < 0) throw RuntimeError("cannot bind " + a.bind);
  ctx.out << "listening on " << a.bind.substr(0, colon) << ":" << bound << std::endl;
  svc.load_async(a.artifacts, a.epsilon, [&ctx](const std::string& m) { ctx.log.error("snapshot load failed: " + m); });
  svc.listen();
  return 0;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  Context ctx{out, Logger(err, log_level_from_env())};
  CLI::App app{"Sequential counterfactuals over temporal binary clinical features"};
  app.require_subcommand(1);

  auto* cat_cmd = app.add_subcommand("catalog", "Write the built-in feature catalog");
  std::string catalog_out;
  cat_cmd->add_option("--out", catalog_out, "Output path (stdout when omitted)");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a calibrated synthetic cohort");
  synth_cmd->add_option("--config", synth.config, "Generator config JSON");
  synth_cmd->add_option("--out", synth.out, "Cohort file (.csv or .jsonl)")->required();
  synth_cmd->add_option("--seed", synth.seed, "Override the config seed");
  synth_cmd->add_option("--n", synth.n, "Override the number of patients");

  BuildArgs build;
  auto* build_cmd = app.add_subcommand("build", "Generate cohort, graph and model into an artifacts directory");
  build_cmd->add_option("--config", build.config, "Generator config JSON");
  build_cmd->add_option("--out", build.out_dir, "Artifacts directory")->required();
  build_cmd->add_option("--seed", build.seed, "Override the config seed");
  build_cmd->add_option("--gamma", build.gamma, "Relative-risk threshold");
  build_cmd->add_option("--min-support", build.min_support, "Minimum patients per source stratum");
  build_cmd->add_option("--regularization", build.regularization, "L2 strength");

  GraphArgs graph;
  auto* graph_cmd = app.add_subcommand("graph", "Estimate the temporal dependency graph");
  graph_cmd->add_option("--cohort", graph.cohort)->required();
  graph_cmd->add_option("--catalog", graph.catalog, "Catalog JSON (built-in when omitted)");
  graph_cmd->add_option("--gamma", graph.gamma, "Relative-risk threshold");
  graph_cmd->add_option("--min-support", graph.min_support, "Minimum patients per source stratum");
  graph_cmd->add_option("--out", graph.out);

  AuditArgs audit;
  auto* audit_cmd = app.add_subcommand("audit", "Violation audit of removal counterfactuals");
  audit_cmd->add_option("--cohort", audit.cohort)->required();
  audit_cmd->add_option("--catalog", audit.catalog);
  audit_cmd->add_option("--graph", audit.graph, "Graph JSON, checked against the catalog");
  audit_cmd->add_option("--out", audit.out, "JSON report path");
  audit_cmd->add_flag("--json", audit.json, "Print JSON instead of the text table");

  CascadeArgs cascade;
  auto* cascade_cmd = app.add_subcommand("cascade", "Cardiorenal cascade and insulin profile");
  cascade_cmd->add_option("--cohort", cascade.cohort)->required();
  cascade_cmd->add_option("--catalog", cascade.catalog);
  cascade_cmd->add_option("--out", cascade.out, "JSON report path");
  cascade_cmd->add_flag("--json", cascade.json, "Print JSON instead of the text table");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Fit the risk model");
  train_cmd->add_option("--cohort", tr.cohort)->required();
  train_cmd->add_option("--catalog", tr.catalog);
  train_cmd->add_option("--out", tr.out);
  train_cmd->add_option("--regularization", tr.regularization);
  train_cmd->add_option("--iterations", tr.iterations);
  train_cmd->add_option("--step-size", tr.step_size);
  train_cmd->add_option("--seed", tr.seed, "Shuffle seed for --holdout");
  train_cmd->add_option("--holdout", tr.holdout, "Held-out fraction; fit on the rest and report AUROC");

  auto add_artifacts = [](CLI::App* c, ArtifactArgs& a) {
    c->add_option("--cohort", a.cohort)->required();
    c->add_option("--catalog", a.catalog);
    c->add_option("--graph", a.graph)->required();
    c->add_option("--model", a.model)->required();
    c->add_option("--epsilon", a.epsilon, "Conditional plausibility threshold");
  };

  CfArgs cf;
  auto* cf_cmd = app.add_subcommand("cf", "Counterfactual for one patient");
  add_artifacts(cf_cmd, cf.artifacts);
  cf_cmd->add_option("--patient", cf.patient)->required();
  cf_cmd->add_option("--mode", cf.mode)->check(CLI::IsMember({"naive", "sequential"}));
  cf_cmd->add_option("--intervention", cf.interventions, "code@period[:add|:remove], repeatable");
  cf_cmd->add_option("--theta", cf.theta, "Risk threshold");
  cf_cmd->add_option("--propagation", cf.propagation)->check(CLI::IsMember({"deterministic", "stochastic"}));
  cf_cmd->add_option("--samples", cf.samples);
  cf_cmd->add_option("--seed", cf.seed);
  cf_cmd->add_option("--max-changes", cf.max_changes);
  cf_cmd->add_option("--out", cf.out);

  SearchArgs search;
  auto* search_cmd = app.add_subcommand("search", "Rank intervention sets for one patient");
  add_artifacts(search_cmd, search.artifacts);
  search_cmd->add_option("--patient", search.patient)->required();
  search_cmd->add_option("--max-interventions", search.max_interventions);
  search_cmd->add_option("--propagation", search.propagation)->check(CLI::IsMember({"deterministic", "stochastic"}));
  search_cmd->add_option("--samples", search.samples);
  search_cmd->add_option("--seed", search.seed);
  search_cmd->add_option("--top", search.top);
  search_cmd->add_option("--out", search.out);

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Serve the HTTP API over an artifacts directory");
  serve_cmd->add_option("--bind", serve.bind, "host:port");
  serve_cmd->add_option("--artifacts", serve.artifacts)->required();
  serve_cmd->add_option("--allow-origin", serve.allow_origin, "CORS origin");
  serve_cmd->add_option("--static-dir", serve.static_dir, "Static assets served under /");
  serve_cmd->add_option("--epsilon", serve.epsilon);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "seqcf: error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (*cat_cmd) {
      emit(ctx, catalog_out, dump(default_catalog().to_json()));
      return 0;
    }
    if (*synth_cmd) return cmd_synth(ctx, synth);
    if (*build_cmd) return cmd_build(ctx, build);
    if (*graph_cmd) return cmd_graph(ctx, graph);
    if (*audit_cmd) return cmd_audit(ctx, audit);
    if (*cascade_cmd) return cmd_cascade(ctx, cascade);
    if (*train_cmd) return cmd_train(ctx, tr);
    if (*cf_cmd) return cmd_cf(ctx, cf);
    if (*search_cmd) return cmd_search(ctx, search);
    if (*serve_cmd) return cmd_serve(ctx, serve);
  } catch (const ValidationError& e) {
    ctx.log.error(e.what());
    return 1;
  } catch (const std::exception& e) {
    ctx.log.error(e.what());
    return 2;
  }
  return 1;
}

}  // namespace seqcf::cli
