// furrow: run consultation strategies against chat models, score the
// results, and render comparison tables.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "furrow/runner.hpp"

namespace {

using namespace furrow;

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t comma = text.find(',', pos);
    std::string item = text.substr(pos, comma == std::string::npos ? std::string::npos
                                                                   : comma - pos);
    std::size_t b = item.find_first_not_of(" \t");
    std::size_t e = item.find_last_not_of(" \t");
    if (b == std::string::npos) {
      throw Error(ErrorKind::Config, "empty item in list '" + text + "'");
    }
    out.push_back(item.substr(b, e - b + 1));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::MissingRun:
    case ErrorKind::MissingRecords:
      return 4;
    default:
      return 2;
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Config, "cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-round consultation runner, evaluator, and report generator"};
  app.set_version_flag("--version", FURROW_VERSION);
  app.require_subcommand(0, 1);

  std::string store_root = "runs";
  std::string config_path;
  app.add_option("--store", store_root, "run store directory (default: runs)");
  app.add_option("--config", config_path, "endpoint/strategy config file");

  // run
  auto* run_cmd = app.add_subcommand("run", "execute every (scenario x model x method) cell");
  std::string dataset, models_csv, backend_str = "http", run_id;
  std::string methods_csv = "base,cot,thot,multiround";
  std::size_t workers = 0;
  run_cmd->add_option("--dataset", dataset, "JSONL scenario dataset")->required();
  run_cmd->add_option("--models", models_csv, "comma-separated model names")->required();
  run_cmd->add_option("--methods", methods_csv, "comma-separated subset of base,cot,thot,multiround");
  run_cmd->add_option("--backend", backend_str, "http | replay:<fixture> | scripted:<script>");
  run_cmd->add_option("--out", run_id, "run id")->required();
  run_cmd->add_option("--workers", workers, "worker threads (default: endpoint concurrency)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "score the transcripts of a run");
  std::string eval_run, mode_str = "keyword_coverage", judge_model, judge_backend_str, rubric_file;
  double tau = 0.6;
  bool force = false;
  eval_cmd->add_option("run_id", eval_run, "run to evaluate")->required();
  eval_cmd->add_option("--tau", tau, "keyword-coverage threshold in (0,1], default 0.6");
  eval_cmd->add_option("--mode", mode_str, "keyword_coverage | judge_binary");
  eval_cmd->add_option("--judge-model", judge_model, "enable rubric scoring with this judge model");
  eval_cmd->add_option("--judge-backend", judge_backend_str,
                       "backend for the judge (default: the run's own backend)");
  eval_cmd->add_option("--rubric-file", rubric_file, "override the judge rubric template");
  eval_cmd->add_flag("--force", force, "overwrite existing evaluation records");

  // report
  auto* report_cmd = app.add_subcommand("report", "render the comparison table for a run");
  std::string report_run, group_by_str = "model", format_str = "markdown";
  report_cmd->add_option("run_id", report_run, "run to report on")->required();
  report_cmd->add_option("--group-by", group_by_str, "model | category");
  report_cmd->add_option("--format", format_str, "markdown | csv");

  // consult
  auto* consult_cmd = app.add_subcommand("consult", "run one scenario and print the exchange");
  std::string scenario_path, consult_model, consult_method = "multiround";
  std::string consult_backend_str = "http";
  bool interactive = false;
  consult_cmd->add_option("--scenario", scenario_path, "scenario JSON file")->required();
  consult_cmd->add_option("--model", consult_model, "model name")->required();
  consult_cmd->add_option("--method", consult_method, "base | cot | thot | multiround");
  consult_cmd->add_option("--backend", consult_backend_str,
                          "http | replay:<fixture> | scripted:<script>");
  consult_cmd->add_flag("--interactive", interactive,
                        "answer the information-gathering prompt yourself");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    std::optional<runner::ToolConfig> config;
    if (!config_path.empty()) config = runner::load_config(config_path);
    const runner::ToolConfig* config_ptr = config ? &*config : nullptr;
    store::RunStore rstore{store_root};

    if (*run_cmd) {
      runner::RunPlan plan;
      plan.dataset_path = dataset;
      plan.models = split_csv(models_csv);
      for (const auto& key : split_csv(methods_csv)) plan.methods.push_back(parse_method(key));
      if (config) plan.strategy = config->strategy;
      plan.run_id = run_id;
      plan.backend = runner::BackendSpec::parse(backend_str);
      plan.workers = workers;
      runner::RunOutcome outcome = runner::cmd_run(plan, rstore, config_ptr);
      std::cout << "run " << outcome.run_id << ": " << outcome.cells_total << " cells, "
                << outcome.cells_failed << " failed\n";
      for (const auto& entry : outcome.ledger) {
        if (!entry.ok) {
          std::cerr << "  failed: " << entry.scenario_id << "/" << entry.model_id << "/"
                    << method_key(entry.method) << ": " << entry.error << "\n";
        }
      }
      return outcome.cells_failed == 0 ? 0 : 3;
    }

    if (*eval_cmd) {
      runner::EvalOptions opts;
      opts.accuracy.tau = tau;
      opts.accuracy.mode = eval::parse_accuracy_mode(mode_str);
      if (!judge_model.empty()) opts.judge_model = judge_model;
      if (!judge_backend_str.empty()) {
        opts.backend = runner::BackendSpec::parse(judge_backend_str);
      }
      if (!rubric_file.empty()) opts.rubric_template = read_file(rubric_file);
      opts.force = force;
      runner::EvalOutcome outcome = runner::cmd_eval(eval_run, opts, rstore, config_ptr);
      std::cout << "eval " << eval_run << ": " << outcome.records_written << " records, "
                << outcome.failures.size() << " failures\n";
      for (const auto& entry : outcome.failures) {
        std::cerr << "  failed: " << entry.scenario_id << "/" << entry.model_id << "/"
                  << method_key(entry.method) << ": " << entry.error << "\n";
      }
      return outcome.failures.empty() ? 0 : 3;
    }

    if (*report_cmd) {
      eval::GroupBy group_by;
      if (group_by_str == "model") {
        group_by = eval::GroupBy::ModelMethod;
      } else if (group_by_str == "category") {
        group_by = eval::GroupBy::CategoryModelMethod;
      } else {
        throw Error(ErrorKind::Config, "--group-by must be model or category");
      }
      std::cout << runner::cmd_report(report_run, group_by, report::parse_format(format_str),
                                      rstore);
      return 0;
    }

    if (*consult_cmd) {
      runner::ConsultOptions opts;
      opts.scenario_path = scenario_path;
      opts.model = consult_model;
      opts.method = parse_method(consult_method);
      opts.backend = runner::BackendSpec::parse(consult_backend_str);
      if (config) opts.strategy = config->strategy;
      opts.interactive = interactive;
      runner::cmd_consult(opts, config_ptr);
      return 0;
    }

    std::cout << app.help();
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
