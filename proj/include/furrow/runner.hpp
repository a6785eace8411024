#pragma once

// Command-level orchestration: config/backend resolution, the concurrent
// run loop, evaluation, report rendering, and the interactive consult flow.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include "furrow/domain.hpp"
#include "furrow/errors.hpp"
#include "furrow/evaluate.hpp"
#include "furrow/gateway.hpp"
#include "furrow/http_transport.hpp"
#include "furrow/report.hpp"
#include "furrow/store.hpp"
#include "furrow/strategies.hpp"
#include "furrow/version.hpp"

namespace furrow::runner {

// ---------------------------------------------------------------------------
// Tool config file

struct ToolConfig {
  std::map<std::string, llm::ModelEndpoint> endpoints;
  strategy::StrategyConfig strategy;
};

inline ToolConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Config, "cannot open config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, "config file " + path + ": " + e.what());
  }
  ToolConfig cfg;
  try {
    if (j.contains("endpoints")) {
      for (const auto& [name, ej] : j.at("endpoints").items()) {
        llm::ModelEndpoint ep;
        ep.model_name = ej.value("model", name);
        ep.base_url = ej.at("base_url").get<std::string>();
        ep.auth_token_env = ej.value("auth_token_env", std::string());
        ep.max_concurrency = ej.value("max_concurrency", 4);
        ep.timeout_s = ej.value("timeout_s", 60.0);
        if (ej.contains("retry")) {
          const auto& rj = ej.at("retry");
          ep.retry.max_attempts = rj.value("max_attempts", 3);
          ep.retry.initial_backoff_ms = rj.value("initial_backoff_ms", 100);
          ep.retry.multiplier = rj.value("multiplier", 2.0);
        }
        cfg.endpoints[name] = std::move(ep);
      }
    }
    if (j.contains("strategy")) {
      const auto& sj = j.at("strategy");
      cfg.strategy.max_rounds = sj.value("max_rounds", 3);
      cfg.strategy.max_focus_items = sj.value("max_focus_items", 3);
      cfg.strategy.temperature = sj.value("temperature", 0.0);
      cfg.strategy.stop_on_no_issues = sj.value("stop_on_no_issues", true);
    }
    if (j.contains("templates")) {
      for (const auto& [name, text] : j.at("templates").items()) {
        cfg.strategy.template_overrides[name] = text.get<std::string>();
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, "config file " + path + ": " + e.what());
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Backend resolution

struct BackendSpec {
  enum class Kind { Http, Replay, Scripted } kind = Kind::Http;
  std::string argument;  // fixture or script path

  static BackendSpec parse(std::string_view text) {
    BackendSpec spec;
    if (text == "http") {
      spec.kind = Kind::Http;
      return spec;
    }
    if (text.rfind("replay:", 0) == 0) {
      spec.kind = Kind::Replay;
      spec.argument = std::string(text.substr(7));
    } else if (text.rfind("scripted:", 0) == 0) {
      spec.kind = Kind::Scripted;
      spec.argument = std::string(text.substr(9));
    } else {
      throw Error(ErrorKind::Config,
                  "backend must be http, replay:<fixture>, or scripted:<script>, got '" +
                      std::string(text) + "'");
    }
    if (spec.argument.empty()) {
      throw Error(ErrorKind::Config, "backend spec is missing its file argument");
    }
    return spec;
  }

  std::string identity() const {
    switch (kind) {
      case Kind::Http: return "http";
      case Kind::Replay: return "replay:" + argument;
      case Kind::Scripted: return "scripted:" + argument;
    }
    return "";
  }

  std::string kind_key() const {
    switch (kind) {
      case Kind::Http: return "http";
      case Kind::Replay: return "replay";
      case Kind::Scripted: return "scripted";
    }
    return "";
  }
};

inline std::optional<std::string> cache_dir_from_env() {
  const char* dir = std::getenv("FURROW_CACHE_DIR");
  if (dir && *dir) return std::string(dir);
  return std::nullopt;
}

inline llm::Backend make_backend(const BackendSpec& spec, const std::string& model,
                                 const ToolConfig* config) {
  switch (spec.kind) {
    case BackendSpec::Kind::Replay:
      return llm::Backend::replay(spec.argument, model);
    case BackendSpec::Kind::Scripted:
      return llm::Backend::scripted_from_file(spec.argument, model);
    case BackendSpec::Kind::Http: {
      if (!config) throw Error(ErrorKind::Config, "http backend needs a config file");
      auto it = config->endpoints.find(model);
      if (it == config->endpoints.end()) {
        std::string known;
        for (const auto& [name, ep] : config->endpoints) {
          if (!known.empty()) known += ", ";
          known += name;
        }
        throw Error(ErrorKind::Config,
                    "unknown model '" + model + "' (config defines: " + known + ")");
      }
      std::shared_ptr<llm::ResponseCache> cache;
      if (auto dir = cache_dir_from_env()) {
        cache = std::make_shared<llm::ResponseCache>(*dir);
      }
      return llm::make_http_backend(it->second, cache);
    }
  }
  throw Error(ErrorKind::Config, "unreachable backend kind");
}

// ---------------------------------------------------------------------------
// cmd_run

struct RunPlan {
  std::string dataset_path;
  std::vector<std::string> models;
  std::vector<Method> methods;
  strategy::StrategyConfig strategy;
  std::string run_id;
  BackendSpec backend;
  std::size_t workers = 0;  // 0: derive from backend concurrency
};

struct RunOutcome {
  std::string run_id;
  std::size_t cells_total = 0;
  std::size_t cells_failed = 0;
  std::vector<store::LedgerEntry> ledger;
};

inline std::map<std::string, std::string> template_digests(const strategy::StrategyConfig& cfg) {
  std::map<std::string, std::string> digests;
  for (const auto& name : strategy::template_names()) {
    digests[std::string(name)] =
        detail::sha256_hex(strategy::resolve_template(std::string(name), cfg.template_overrides));
  }
  return digests;
}

inline RunOutcome cmd_run(const RunPlan& plan, const store::RunStore& rstore,
                          const ToolConfig* config = nullptr) {
  if (plan.models.empty()) throw Error(ErrorKind::Config, "no models given");
  if (plan.methods.empty()) throw Error(ErrorKind::Config, "no methods given");
  if (plan.run_id.empty() || !store::filesystem_safe(plan.run_id)) {
    throw Error(ErrorKind::Config, "run id must be a filesystem-safe name");
  }
  for (std::size_t i = 0; i < plan.models.size(); ++i) {
    for (std::size_t k = i + 1; k < plan.models.size(); ++k) {
      if (plan.models[i] == plan.models[k]) {
        throw Error(ErrorKind::Config, "duplicate model '" + plan.models[i] + "'");
      }
    }
  }
  for (std::size_t i = 0; i < plan.methods.size(); ++i) {
    for (std::size_t k = i + 1; k < plan.methods.size(); ++k) {
      if (plan.methods[i] == plan.methods[k]) {
        throw Error(ErrorKind::Config,
                    "duplicate method '" + method_key(plan.methods[i]) + "'");
      }
    }
  }
  strategy::detail_strat::check_config(plan.strategy);
  if (rstore.run_exists(plan.run_id)) {
    throw Error(ErrorKind::Config, "run '" + plan.run_id + "' already exists");
  }

  store::DatasetLoadResult loaded = store::load_dataset_strict(plan.dataset_path);
  const store::Dataset& dataset = loaded.dataset;

  std::map<std::string, llm::Backend> backends;
  std::size_t workers = plan.workers;
  for (const auto& model : plan.models) {
    llm::Backend b = make_backend(plan.backend, model, config);
    if (workers == 0 && plan.backend.kind == BackendSpec::Kind::Http && config) {
      workers = std::max(workers,
                         static_cast<std::size_t>(config->endpoints.at(model).max_concurrency));
    }
    backends.emplace(model, std::move(b));
  }
  if (workers == 0) workers = 4;

  struct Cell {
    const Scenario* scenario;
    const std::string* model;
    Method method;
  };
  std::vector<Cell> cells;
  cells.reserve(dataset.scenarios.size() * plan.models.size() * plan.methods.size());
  for (const auto& scenario : dataset.scenarios) {
    for (const auto& model : plan.models) {
      for (Method method : plan.methods) {
        cells.push_back(Cell{&scenario, &model, method});
      }
    }
  }

  std::atomic<std::size_t> next{0};
  std::mutex ledger_mu;
  std::vector<store::LedgerEntry> ledger;
  ledger.reserve(cells.size());

  auto work = [&] {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) break;
      const Cell& cell = cells[i];
      store::LedgerEntry entry;
      entry.scenario_id = cell.scenario->id;
      entry.model_id = *cell.model;
      entry.method = cell.method;
      entry.ok = true;
      try {
        strategy::StrategyConfig cfg = plan.strategy;
        cfg.method = cell.method;
        Transcript t =
            strategy::run_strategy(*cell.scenario, *cell.model, cfg, backends.at(*cell.model));
        rstore.persist_transcript(plan.run_id, t);
      } catch (const strategy::RunError& e) {
        entry.ok = false;
        entry.error = e.what();
        try {
          rstore.persist_partial_transcript(plan.run_id, e.partial_transcript());
        } catch (const std::exception&) {
          // the failure itself is already on record
        }
      } catch (const std::exception& e) {
        entry.ok = false;
        entry.error = e.what();
      }
      std::lock_guard<std::mutex> lk(ledger_mu);
      ledger.push_back(std::move(entry));
    }
  };

  std::size_t n_threads = std::min(workers, cells.size());
  if (n_threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  std::sort(ledger.begin(), ledger.end(), [](const auto& a, const auto& b) {
    return std::tie(a.scenario_id, a.model_id, a.method) <
           std::tie(b.scenario_id, b.model_id, b.method);
  });

  store::ManifestInfo manifest;
  manifest.run_id = plan.run_id;
  manifest.created_at = now_utc_iso8601();
  manifest.tool_version = FURROW_VERSION;
  manifest.dataset_path = plan.dataset_path;
  manifest.dataset_name = dataset.name;
  manifest.dataset_version = dataset.version;
  manifest.dataset_digest = loaded.content_digest;
  manifest.models = plan.models;
  manifest.methods = plan.methods;
  manifest.strategy = {{"max_rounds", plan.strategy.max_rounds},
                       {"max_focus_items", plan.strategy.max_focus_items},
                       {"temperature", plan.strategy.temperature},
                       {"stop_on_no_issues", plan.strategy.stop_on_no_issues}};
  manifest.backend_kind = plan.backend.kind_key();
  manifest.backend_identity = plan.backend.identity();
  manifest.template_digests = template_digests(plan.strategy);
  manifest.workers = static_cast<int>(n_threads);
  rstore.write_manifest(manifest);
  rstore.write_ledger(plan.run_id, ledger);

  RunOutcome outcome;
  outcome.run_id = plan.run_id;
  outcome.cells_total = cells.size();
  for (const auto& entry : ledger) {
    if (!entry.ok) ++outcome.cells_failed;
  }
  outcome.ledger = std::move(ledger);
  return outcome;
}

// ---------------------------------------------------------------------------
// cmd_eval

struct EvalOptions {
  eval::AccuracyConfig accuracy;
  std::optional<std::string> judge_model;
  std::optional<BackendSpec> backend;  // default: the run's own backend
  std::string rubric_template;
  double scale_min = 1.0;
  double scale_max = 5.0;
  bool force = false;
};

struct EvalOutcome {
  std::size_t records_written = 0;
  std::vector<store::LedgerEntry> failures;
};

inline EvalOutcome cmd_eval(const std::string& run_id, const EvalOptions& opts,
                            const store::RunStore& rstore, const ToolConfig* config = nullptr) {
  store::ManifestInfo manifest = rstore.read_manifest(run_id);
  if (opts.accuracy.tau <= 0.0 || opts.accuracy.tau > 1.0) {
    throw Error(ErrorKind::Config, "tau must lie in (0, 1]");
  }
  if (opts.accuracy.mode == eval::AccuracyMode::JudgeBinary && !opts.judge_model) {
    throw Error(ErrorKind::Config, "judge_binary accuracy needs --judge-model");
  }
  if (!opts.force && !rstore.list_records(run_id).empty()) {
    throw Error(ErrorKind::DuplicateKey,
                "run '" + run_id + "' already has evaluation records (use --force)");
  }

  store::DatasetLoadResult loaded = store::load_dataset_strict(manifest.dataset_path);
  std::map<std::string, const Scenario*> by_id;
  for (const auto& s : loaded.dataset.scenarios) by_id[s.id] = &s;

  std::optional<eval::JudgeConfig> judge;
  if (opts.judge_model) {
    BackendSpec spec = opts.backend ? *opts.backend : BackendSpec::parse(manifest.backend_identity);
    eval::JudgeConfig jc{make_backend(spec, *opts.judge_model, config), opts.rubric_template,
                         opts.scale_min, opts.scale_max, 0.0};
    judge = std::move(jc);
  }

  EvalOutcome outcome;
  for (const auto& key : rstore.list_transcripts(run_id)) {
    Transcript t = rstore.load_transcript(key);
    store::LedgerEntry entry;
    entry.scenario_id = t.scenario_id;
    entry.model_id = t.model_id;
    entry.method = t.method;
    entry.ok = true;

    auto it = by_id.find(t.scenario_id);
    if (it == by_id.end()) {
      entry.ok = false;
      entry.error = "scenario '" + t.scenario_id + "' not in dataset " + manifest.dataset_path;
      outcome.failures.push_back(std::move(entry));
      continue;
    }
    const Scenario& scenario = *it->second;

    std::optional<JudgeScore> score;
    if (judge) {
      try {
        score = eval::judge_score(t, scenario, *judge);
      } catch (const std::exception& e) {
        entry.ok = false;
        entry.error = e.what();
      }
    }
    if (opts.accuracy.mode == eval::AccuracyMode::JudgeBinary && !score) {
      outcome.failures.push_back(std::move(entry));
      continue;
    }

    EvaluationRecord record;
    record.scenario_id = t.scenario_id;
    record.model_id = t.model_id;
    record.method = t.method;
    record.transcript_ref = key;
    try {
      eval::AccuracyResult acc = eval::score_accuracy(
          t.final_answer, scenario, opts.accuracy, score ? &*score : nullptr, opts.scale_max);
      record.correct = acc.correct;
      record.coverage = acc.coverage;
    } catch (const std::exception& e) {
      entry.ok = false;
      entry.error = e.what();
      outcome.failures.push_back(std::move(entry));
      continue;
    }
    record.judge = std::move(score);
    rstore.persist_record(run_id, record, opts.force);
    ++outcome.records_written;
    if (!entry.ok) outcome.failures.push_back(std::move(entry));
  }

  manifest.accuracy = {{"mode", eval::accuracy_mode_key(opts.accuracy.mode)},
                       {"tau", opts.accuracy.tau}};
  if (opts.judge_model) {
    std::string rubric = opts.rubric_template.empty() ? std::string(eval::kDefaultRubric)
                                                      : opts.rubric_template;
    manifest.judge = nlohmann::json{
        {"model", *opts.judge_model},
        {"scale", {opts.scale_min, opts.scale_max}},
        {"rubric_digest", detail::sha256_hex(rubric)},
        {"rubric_includes_reference", rubric.find("{{reference}}") != std::string::npos}};
  } else {
    manifest.judge = nullptr;
  }
  rstore.write_manifest(manifest);
  return outcome;
}

// ---------------------------------------------------------------------------
// cmd_report

inline std::string cmd_report(const std::string& run_id, eval::GroupBy group_by,
                              report::TableFormat format, const store::RunStore& rstore) {
  store::ManifestInfo manifest = rstore.read_manifest(run_id);
  std::vector<std::string> keys = rstore.list_records(run_id);
  if (keys.empty()) {
    throw Error(ErrorKind::MissingRecords, "run '" + run_id + "' has no evaluation records");
  }
  std::vector<EvaluationRecord> records;
  records.reserve(keys.size());
  for (const auto& key : keys) records.push_back(rstore.load_record(key));

  std::optional<std::map<std::string, Category>> categories;
  if (group_by == eval::GroupBy::CategoryModelMethod) {
    store::DatasetLoadResult loaded = store::load_dataset_strict(manifest.dataset_path);
    categories.emplace();
    for (const auto& s : loaded.dataset.scenarios) categories->emplace(s.id, s.category);
  }

  std::vector<AggregateRow> rows =
      eval::aggregate(records, group_by, categories ? &*categories : nullptr);
  std::string caption = group_by == eval::GroupBy::ModelMethod
                            ? "Comparison of different methods on various models"
                            : "Comparison of methods across agricultural scenario categories";
  return report::render(report::make_table(std::move(rows), caption), format);
}

// ---------------------------------------------------------------------------
// cmd_consult

struct ConsultOptions {
  std::string scenario_path;
  std::string model;
  Method method = Method::MultiRound;
  BackendSpec backend;
  strategy::StrategyConfig strategy;
  bool interactive = false;
};

inline Scenario load_single_scenario(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Storage, "cannot open scenario file " + path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::string line;
  std::size_t pos = 0;
  // whole-file JSON object, or the first non-blank JSONL line
  try {
    return nlohmann::json::parse(content).get<Scenario>();
  } catch (const nlohmann::json::exception&) {
  }
  while (pos < content.size()) {
    std::size_t eol = content.find('\n', pos);
    line = content.substr(pos, eol == std::string::npos ? std::string::npos : eol - pos);
    pos = eol == std::string::npos ? content.size() : eol + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      return nlohmann::json::parse(line).get<Scenario>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::Parse, "scenario file " + path + ": " + e.what());
    }
  }
  throw Error(ErrorKind::Parse, "scenario file " + path + " holds no scenario");
}

inline Transcript cmd_consult(const ConsultOptions& opts, const ToolConfig* config = nullptr,
                              std::istream& in = std::cin, std::ostream& out = std::cout) {
  Scenario scenario = load_single_scenario(opts.scenario_path);
  if (opts.interactive) {
    out << strategy::default_template("initial_header") << "\n";
    out << "(enter field details, finish with an empty line)\n> " << std::flush;
    std::vector<std::pair<std::string, std::string>> context;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) break;
      context.emplace_back("operator_report", line);
      out << "> " << std::flush;
    }
    out << "\n";
    if (!context.empty()) scenario.context = std::move(context);
  }

  llm::Backend backend = make_backend(opts.backend, opts.model, config);
  strategy::StrategyConfig cfg = opts.strategy;
  cfg.method = opts.method;

  std::size_t shown = 0;
  auto observer = [&](const ModelCall& call) {
    ++shown;
    out << "--- exchange " << shown << (call.auxiliary ? " (focus extraction)" : "") << " ---\n";
    for (auto rit = call.request.rbegin(); rit != call.request.rend(); ++rit) {
      if (rit->role == Role::User) {
        out << "[user]\n" << rit->content << "\n\n";
        break;
      }
    }
    out << "[" << backend.model_name() << "]\n" << call.response.content << "\n\n";
  };

  Transcript t = strategy::run_strategy(scenario, opts.model, cfg, backend, observer);
  out << "=== final recommendation ===\n" << t.final_answer << "\n";
  return t;
}

}  // namespace furrow::runner
