#pragma once

// The four prompting strategies, each a deterministic state machine over the
// gateway:
//
//   Base       one shot, no refinement
//   CoT        one shot with a stepwise-reasoning instruction
//   ThoT       two passes: segmented context analysis, then the answer
//   MultiRound initial information gathering, model-extracted focus items,
//              one follow-up per item, terminal synthesis
//
// Main call budgets: Base = 1, CoT = 1, ThoT = 2, MultiRound in
// [2, max_rounds + 1]. Focus-item extraction calls are recorded in the
// transcript but marked auxiliary and excluded from the budget.

#include <algorithm>
#include <cctype>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "furrow/domain.hpp"
#include "furrow/errors.hpp"
#include "furrow/gateway.hpp"
#include "furrow/templates.hpp"

namespace furrow::strategy {

struct StrategyConfig {
  Method method = Method::MultiRound;
  int max_rounds = 3;       // MultiRound only
  int max_focus_items = 3;  // cap on extracted issues per round
  double temperature = 0.0;
  std::map<std::string, std::string> template_overrides;
  bool stop_on_no_issues = true;
};

/// One unresolved issue pulled out of a response; `evidence` is a verbatim
/// span of the response it was extracted from.
struct FocusItem {
  std::string label;
  std::string evidence;

  bool operator==(const FocusItem&) const = default;
};

/// Called after every completed model call; lets the CLI stream rounds as
/// they happen.
using CallObserver = std::function<void(const ModelCall&)>;

/// Error thrown out of a strategy run. Carries whatever transcript had been
/// built so callers can persist the partial record next to the failure.
class RunError : public Error {
 public:
  RunError(ErrorKind kind, const std::string& message, Transcript partial)
      : Error(kind, message), partial_(std::move(partial)) {}

  const Transcript& partial_transcript() const { return partial_; }

 private:
  Transcript partial_;
};

namespace detail_strat {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline void check_config(const StrategyConfig& cfg) {
  if (cfg.max_rounds < 1) throw Error(ErrorKind::Validation, "max_rounds must be >= 1");
  if (cfg.max_focus_items < 1) throw Error(ErrorKind::Validation, "max_focus_items must be >= 1");
  for (const auto& [name, text] : cfg.template_overrides) {
    (void)text;
    const auto& names = template_names();
    if (std::find(names.begin(), names.end(), name) == names.end()) {
      throw Error(ErrorKind::Template, "override for unknown template '" + name + "'");
    }
  }
}

}  // namespace detail_strat

// ---------------------------------------------------------------------------
// Prompt builders

/// Renders the initial information-gathering prompt: field conditions and
/// machinery details first, then the question. A scenario without context
/// fields degenerates to the question section alone.
inline std::string build_initial_prompt(const Scenario& s,
                                        const StrategyConfig& cfg = {}) {
  const auto& ov = cfg.template_overrides;
  std::string question =
      render_template(resolve_template("question_section", ov), {{"question", s.question}});
  if (s.context.empty()) return question;

  std::string lines;
  for (const auto& [field, value] : s.context) {
    lines += "- " + field + ": " + value + "\n";
  }
  if (!lines.empty()) lines.pop_back();

  std::string header = render_template(resolve_template("initial_header", ov), {});
  std::string block =
      render_template(resolve_template("context_block", ov), {{"context_lines", lines}});
  return header + "\n\n" + block + "\n\n" + question;
}

/// Renders the follow-up prompt for one focus item. Label and machinery are
/// trimmed before substitution.
inline std::string build_followup_prompt(const FocusItem& item, const std::string& machinery,
                                         const StrategyConfig& cfg = {}) {
  if (item.label.empty()) throw Error(ErrorKind::Validation, "focus item label empty");
  return render_template(resolve_template("followup", cfg.template_overrides),
                         {{"issue", detail_strat::trim(item.label)},
                          {"machinery", detail_strat::trim(machinery)}});
}

/// Picks the machinery description a follow-up prompt should name: the first
/// context field whose name mentions machinery or a model, else a generic
/// fallback.
inline std::string machinery_label(const Scenario& s) {
  for (const auto& [field, value] : s.context) {
    std::string canon = canonicalize_text(field);
    if (canon.find("machinery") != std::string::npos ||
        canon.find("model") != std::string::npos) {
      return detail_strat::trim(value);
    }
  }
  return "machinery";
}

// ---------------------------------------------------------------------------
// Focus-item extraction

struct ExtractionResult {
  std::vector<FocusItem> items;
  ModelCall call;  // the auxiliary extraction exchange
};

/// Parses extraction output lines of the form "- <label> | <evidence>".
/// Malformed lines are skipped; items whose evidence is not a verbatim
/// substring of `response` are dropped.
inline std::vector<FocusItem> parse_focus_lines(const std::string& text,
                                                const std::string& response,
                                                int max_items) {
  std::vector<FocusItem> items;
  std::size_t pos = 0;
  while (pos <= text.size() && static_cast<int>(items.size()) < max_items) {
    std::size_t eol = text.find('\n', pos);
    std::string line = detail_strat::trim(
        text.substr(pos, eol == std::string::npos ? std::string::npos : eol - pos));
    pos = eol == std::string::npos ? text.size() + 1 : eol + 1;
    if (line.empty()) continue;
    if (line.size() < 2 || line[0] != '-' || line[1] != ' ') continue;
    auto sep = line.find(" | ");
    if (sep == std::string::npos || sep < 2) continue;
    std::string label = detail_strat::trim(line.substr(2, sep - 2));
    std::string evidence = detail_strat::trim(line.substr(sep + 3));
    if (label.empty() || evidence.empty()) continue;
    if (response.find(evidence) == std::string::npos) continue;
    items.push_back({std::move(label), std::move(evidence)});
  }
  return items;
}

/// Asks the model to list unresolved issues in the prior response. The
/// exchange is returned as an auxiliary ModelCall to be appended to the
/// transcript.
inline ExtractionResult extract_focus_items(const std::string& response,
                                            const StrategyConfig& cfg,
                                            const llm::Backend& backend) {
  if (response.empty()) throw Error(ErrorKind::Validation, "cannot extract from empty response");
  const auto& ov = cfg.template_overrides;
  std::string prompt = render_template(
      resolve_template("extract", ov),
      {{"max_items", std::to_string(cfg.max_focus_items)}, {"response", response}});

  std::vector<ChatMessage> request = {
      system_message(render_template(resolve_template("system_preamble", ov), {})),
      user_message(prompt)};
  llm::CompletionRequest req{request, cfg.temperature, std::nullopt, std::nullopt};
  llm::CompletionResponse resp = backend.complete(req);

  ExtractionResult result;
  result.call.request = std::move(request);
  result.call.response = assistant_message(resp.content);
  result.call.latency_ms = resp.latency_ms;
  result.call.prompt_tokens = resp.prompt_tokens;
  result.call.completion_tokens = resp.completion_tokens;
  result.call.auxiliary = true;
  result.items = parse_focus_lines(resp.content, response, cfg.max_focus_items);
  return result;
}

// ---------------------------------------------------------------------------
// Strategy runners

namespace detail_strat {

struct RunState {
  Transcript transcript;
  std::vector<ChatMessage> conversation;
  const StrategyConfig* cfg;
  const llm::Backend* backend;
  const CallObserver* observer;

  /// Issues one main call with the accumulated conversation and appends the
  /// assistant's reply to it.
  std::string call_main() {
    llm::CompletionRequest req{conversation, cfg->temperature, std::nullopt, std::nullopt};
    llm::CompletionResponse resp = backend->complete(req);
    ModelCall call;
    call.request = conversation;
    call.response = assistant_message(resp.content);
    call.latency_ms = resp.latency_ms;
    call.prompt_tokens = resp.prompt_tokens;
    call.completion_tokens = resp.completion_tokens;
    conversation.push_back(call.response);
    transcript.calls.push_back(call);
    if (observer && *observer) (*observer)(transcript.calls.back());
    return resp.content;
  }
};

inline RunState start_run(const Scenario& s, const std::string& model,
                          const StrategyConfig& cfg, const llm::Backend& backend,
                          const CallObserver& observer, Method method) {
  check_config(cfg);
  if (auto violations = validate_scenario(s); !violations.empty()) {
    throw Error(ErrorKind::Validation, "scenario " + s.id + ": " + violations.front());
  }
  RunState state;
  state.transcript.scenario_id = s.id;
  state.transcript.model_id = model;
  state.transcript.method = method;
  state.transcript.created_at = now_utc_iso8601();
  state.conversation.push_back(system_message(
      render_template(resolve_template("system_preamble", cfg.template_overrides), {})));
  state.cfg = &cfg;
  state.backend = &backend;
  state.observer = &observer;
  return state;
}

[[noreturn]] inline void rethrow_with_scenario(const Error& e, const Scenario& s,
                                               Transcript partial) {
  throw RunError(e.kind(), "scenario " + s.id + ": " + e.message(), std::move(partial));
}

}  // namespace detail_strat

/// Single-prompt baseline: one call, no refinement.
inline Transcript run_base(const Scenario& s, const std::string& model,
                           const StrategyConfig& cfg, const llm::Backend& backend,
                           const CallObserver& observer = {}) {
  auto state = detail_strat::start_run(s, model, cfg, backend, observer, Method::Base);
  try {
    state.conversation.push_back(user_message(build_initial_prompt(s, cfg)));
    state.transcript.final_answer = state.call_main();
  } catch (const RunError&) {
    throw;
  } catch (const Error& e) {
    detail_strat::rethrow_with_scenario(e, s, std::move(state.transcript));
  }
  return std::move(state.transcript);
}

/// Chain-of-thought baseline: one call with a stepwise-reasoning instruction.
inline Transcript run_cot(const Scenario& s, const std::string& model,
                          const StrategyConfig& cfg, const llm::Backend& backend,
                          const CallObserver& observer = {}) {
  auto state = detail_strat::start_run(s, model, cfg, backend, observer, Method::CoT);
  try {
    std::string instruction =
        render_template(resolve_template("cot_instruction", cfg.template_overrides), {});
    state.conversation.push_back(
        user_message(build_initial_prompt(s, cfg) + "\n\n" + instruction));
    state.transcript.final_answer = state.call_main();
  } catch (const RunError&) {
    throw;
  } catch (const Error& e) {
    detail_strat::rethrow_with_scenario(e, s, std::move(state.transcript));
  }
  return std::move(state.transcript);
}

/// Thread-of-thought baseline: segmented context analysis, then the final
/// recommendation with the analysis threaded into the second request.
inline Transcript run_thot(const Scenario& s, const std::string& model,
                           const StrategyConfig& cfg, const llm::Backend& backend,
                           const CallObserver& observer = {}) {
  auto state = detail_strat::start_run(s, model, cfg, backend, observer, Method::ThoT);
  try {
    const auto& ov = cfg.template_overrides;
    state.conversation.push_back(user_message(
        build_initial_prompt(s, cfg) + "\n\n" + render_template(resolve_template("thot_pass1", ov), {})));
    state.call_main();
    state.conversation.push_back(
        user_message(render_template(resolve_template("thot_pass2", ov), {})));
    state.transcript.final_answer = state.call_main();
  } catch (const RunError&) {
    throw;
  } catch (const Error& e) {
    detail_strat::rethrow_with_scenario(e, s, std::move(state.transcript));
  }
  return std::move(state.transcript);
}

/// The multi-round method: initial information gathering, then up to
/// max_rounds - 1 refinement rounds (extract focus items, follow up on the
/// first unprocessed one, appending the prior conversation), then a terminal
/// synthesis call whose response becomes the final answer.
inline Transcript run_multiround(const Scenario& s, const std::string& model,
                                 const StrategyConfig& cfg, const llm::Backend& backend,
                                 const CallObserver& observer = {}) {
  auto state = detail_strat::start_run(s, model, cfg, backend, observer, Method::MultiRound);
  try {
    const auto& ov = cfg.template_overrides;
    state.conversation.push_back(user_message(build_initial_prompt(s, cfg)));
    std::string last_response = state.call_main();

    std::string machinery = machinery_label(s);
    std::set<std::string> processed;
    for (int round = 1; round <= cfg.max_rounds - 1; ++round) {
      ExtractionResult extraction = extract_focus_items(last_response, cfg, backend);
      state.transcript.calls.push_back(extraction.call);
      if (state.observer && *state.observer) (*state.observer)(state.transcript.calls.back());

      const FocusItem* next = nullptr;
      for (const auto& item : extraction.items) {
        if (!processed.contains(item.label)) {
          next = &item;
          break;
        }
      }
      if (!next) {
        if (cfg.stop_on_no_issues) break;
        continue;  // keep probing until the round budget runs out
      }
      processed.insert(next->label);
      state.conversation.push_back(user_message(build_followup_prompt(*next, machinery, cfg)));
      last_response = state.call_main();
    }

    state.conversation.push_back(
        user_message(render_template(resolve_template("synthesis", ov), {})));
    state.transcript.final_answer = state.call_main();
  } catch (const RunError&) {
    throw;
  } catch (const Error& e) {
    detail_strat::rethrow_with_scenario(e, s, std::move(state.transcript));
  }
  return std::move(state.transcript);
}

/// Dispatch on the configured method.
inline Transcript run_strategy(const Scenario& s, const std::string& model,
                               const StrategyConfig& cfg, const llm::Backend& backend,
                               const CallObserver& observer = {}) {
  switch (cfg.method) {
    case Method::Base: return run_base(s, model, cfg, backend, observer);
    case Method::CoT: return run_cot(s, model, cfg, backend, observer);
    case Method::ThoT: return run_thot(s, model, cfg, backend, observer);
    case Method::MultiRound: return run_multiround(s, model, cfg, backend, observer);
  }
  throw Error(ErrorKind::Config, "unknown method");
}

}  // namespace furrow::strategy
