#pragma once

// Scoring: deterministic keyword-coverage accuracy, the LLM-judge rubric
// score, and aggregation into per-(model, method) table rows.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "furrow/domain.hpp"
#include "furrow/errors.hpp"
#include "furrow/gateway.hpp"
#include "furrow/templates.hpp"

namespace furrow::eval {

// ---------------------------------------------------------------------------
// Accuracy

enum class AccuracyMode { KeywordCoverage, JudgeBinary };

inline std::string accuracy_mode_key(AccuracyMode m) {
  return m == AccuracyMode::KeywordCoverage ? "keyword_coverage" : "judge_binary";
}

inline AccuracyMode parse_accuracy_mode(std::string_view key) {
  if (key == "keyword_coverage" || key == "keyword") return AccuracyMode::KeywordCoverage;
  if (key == "judge_binary" || key == "judge") return AccuracyMode::JudgeBinary;
  throw Error(ErrorKind::Config, "unknown accuracy mode '" + std::string(key) + "'");
}

struct AccuracyConfig {
  double tau = 0.6;  // coverage threshold in (0, 1]
  AccuracyMode mode = AccuracyMode::KeywordCoverage;
};

struct AccuracyResult {
  double coverage = 0.0;
  bool correct = false;
};

/// KeywordCoverage: the fraction of answer_keywords (canonicalized, list
/// order and duplicates preserved) that occur as substrings of the
/// canonicalized answer; correct when coverage reaches tau. JudgeBinary:
/// correct when the judge's overall is at least 4.0, with coverage =
/// overall / scale_max; requires a judge score.
inline AccuracyResult score_accuracy(const std::string& final_answer, const Scenario& s,
                                     const AccuracyConfig& cfg,
                                     const JudgeScore* judge = nullptr,
                                     double scale_max = 5.0) {
  if (cfg.tau <= 0.0 || cfg.tau > 1.0) {
    throw Error(ErrorKind::Config, "tau must lie in (0, 1]");
  }
  if (cfg.mode == AccuracyMode::JudgeBinary) {
    if (!judge) {
      throw Error(ErrorKind::Config, "judge_binary accuracy needs a judge score");
    }
    AccuracyResult result;
    result.coverage = judge->overall / scale_max;
    result.correct = judge->overall >= 4.0;
    return result;
  }

  if (s.answer_keywords.empty()) {
    throw Error(ErrorKind::Validation, "scenario " + s.id + " has no keywords");
  }
  std::string answer = canonicalize_text(final_answer);
  std::size_t matched = 0;
  for (const auto& kw : s.answer_keywords) {
    std::string canon = canonicalize_text(kw);
    if (canon.empty()) {
      throw Error(ErrorKind::Validation,
                  "scenario " + s.id + " has a keyword that canonicalizes to nothing");
    }
    if (answer.find(canon) != std::string::npos) ++matched;
  }
  AccuracyResult result;
  result.coverage = static_cast<double>(matched) / static_cast<double>(s.answer_keywords.size());
  result.correct = result.coverage >= cfg.tau;
  return result;
}

// ---------------------------------------------------------------------------
// Judge

struct JudgeConfig {
  llm::Backend judge_backend;
  std::string rubric_template;  // empty = built-in rubric
  double scale_min = 1.0;
  double scale_max = 5.0;
  double temperature = 0.0;
};

inline constexpr std::string_view kDefaultRubric =
    "You are grading the quality of a consultation answer about agricultural "
    "machinery management.\n\nQuestion:\n{{question}}\n\nReference answer:\n"
    "{{reference}}\n\nAnswer to grade:\n{{response}}\n\nRate the answer for "
    "relevance, coherence, and practical applicability, each on a scale from "
    "1 to 5 (one decimal allowed). Reply with exactly four lines:\n"
    "Relevance: <x>\nCoherence: <x>\nApplicability: <x>\nOverall: <x>";

/// Finds the last occurrence of each labeled number anywhere in the judge's
/// output. All four labels are required and every value must lie inside the
/// scale; out-of-range values are an error, never clamped.
inline JudgeScore parse_judge_output(const std::string& text, double scale_min = 1.0,
                                     double scale_max = 5.0) {
  struct Label {
    const char* name;
    double JudgeScore::* field;
  };
  static constexpr Label labels[] = {{"Relevance", &JudgeScore::relevance},
                                     {"Coherence", &JudgeScore::coherence},
                                     {"Applicability", &JudgeScore::applicability},
                                     {"Overall", &JudgeScore::overall}};

  auto ascii_lower = [](std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
  };
  const std::string haystack = ascii_lower(text);

  JudgeScore score;
  score.raw_text = text;
  std::vector<std::string> problems;
  for (const auto& label : labels) {
    const std::string needle = ascii_lower(std::string(label.name));
    std::optional<double> value;
    std::size_t search = 0;
    while (true) {
      std::size_t at = haystack.find(needle, search);
      if (at == std::string::npos) break;
      search = at + 1;
      std::size_t p = at + needle.size();
      while (p < haystack.size() && (haystack[p] == ' ' || haystack[p] == '\t')) ++p;
      if (p >= haystack.size() || haystack[p] != ':') continue;
      ++p;
      while (p < haystack.size() && (haystack[p] == ' ' || haystack[p] == '\t')) ++p;
      std::size_t digits_end = p;
      while (digits_end < haystack.size() &&
             (std::isdigit(static_cast<unsigned char>(haystack[digits_end])) ||
              haystack[digits_end] == '.' || haystack[digits_end] == '-')) {
        ++digits_end;
      }
      if (digits_end == p) continue;
      try {
        value = std::stod(haystack.substr(p, digits_end - p));  // last occurrence wins
      } catch (const std::exception&) {
        // not a number; keep scanning
      }
    }
    if (!value) {
      problems.push_back(std::string(label.name) + " missing");
      continue;
    }
    if (*value < scale_min || *value > scale_max) {
      problems.push_back(std::string(label.name) + " out of range: " + std::to_string(*value));
      continue;
    }
    score.*(label.field) = *value;
  }
  if (!problems.empty()) {
    std::string message = "judge output unusable:";
    for (const auto& p : problems) message += " " + p + ";";
    throw Error(ErrorKind::JudgeFormat, message);
  }
  return score;
}

/// Renders the rubric, queries the judge backend, and parses the rubric
/// lines. One automatic re-ask on malformed output, then a hard error.
inline JudgeScore judge_score(const Transcript& t, const Scenario& s, const JudgeConfig& cfg) {
  if (cfg.scale_min >= cfg.scale_max) {
    throw Error(ErrorKind::Config, "judge scale_min must be below scale_max");
  }
  if (t.final_answer.empty()) {
    throw Error(ErrorKind::Validation, "transcript for " + t.scenario_id + " has no final answer");
  }
  std::string rubric = cfg.rubric_template.empty() ? std::string(kDefaultRubric)
                                                   : cfg.rubric_template;
  std::string prompt = strategy::render_template(rubric, {{"question", s.question},
                                                          {"reference", s.reference_answer},
                                                          {"response", t.final_answer}});
  std::vector<ChatMessage> messages = {user_message(prompt)};
  llm::CompletionRequest req{messages, cfg.temperature, std::nullopt, std::nullopt};
  llm::CompletionResponse resp = cfg.judge_backend.complete(req);
  try {
    return parse_judge_output(resp.content, cfg.scale_min, cfg.scale_max);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::JudgeFormat) throw;
  }
  // Re-ask once with the malformed reply in context.
  messages.push_back(assistant_message(resp.content));
  messages.push_back(user_message(
      "That reply did not follow the required format. Reply again with exactly four lines:\n"
      "Relevance: <x>\nCoherence: <x>\nApplicability: <x>\nOverall: <x>"));
  llm::CompletionRequest retry{messages, cfg.temperature, std::nullopt, std::nullopt};
  llm::CompletionResponse second = cfg.judge_backend.complete(retry);
  return parse_judge_output(second.content, cfg.scale_min, cfg.scale_max);
}

// ---------------------------------------------------------------------------
// Aggregation

enum class GroupBy { ModelMethod, CategoryModelMethod };

/// Folds evaluation records into table rows. For category grouping, pass the
/// scenario-id -> category map from the dataset. Rows come back sorted by
/// (category,) model, then method in Base, CoT, ThoT, MultiRound order.
inline std::vector<AggregateRow> aggregate(
    const std::vector<EvaluationRecord>& records, GroupBy group_by,
    const std::map<std::string, Category>* scenario_categories = nullptr) {
  if (records.empty()) throw Error(ErrorKind::EmptyInput, "no records to aggregate");
  if (group_by == GroupBy::CategoryModelMethod && !scenario_categories) {
    throw Error(ErrorKind::Config, "category grouping needs scenario categories");
  }

  struct Key {
    std::string category_key;
    int category_rank = 0;
    std::string model;
    int method = 0;

    auto tie() const { return std::tie(category_rank, category_key, model, method); }
    bool operator<(const Key& other) const { return tie() < other.tie(); }
  };
  struct Acc {
    std::optional<Category> category;
    std::size_t n = 0;
    std::size_t correct = 0;
    std::size_t judged = 0;
    double judge_sum = 0.0;
  };

  std::map<Key, Acc> cells;
  for (const auto& r : records) {
    Key key;
    std::optional<Category> category;
    if (group_by == GroupBy::CategoryModelMethod) {
      auto it = scenario_categories->find(r.scenario_id);
      if (it == scenario_categories->end()) {
        throw Error(ErrorKind::Validation,
                    "record references unknown scenario '" + r.scenario_id + "'");
      }
      category = it->second;
      key.category_key = category_key(*category);
      key.category_rank = category_rank(*category);
    }
    key.model = r.model_id;
    key.method = static_cast<int>(r.method);

    Acc& acc = cells[key];
    acc.category = category;
    acc.n += 1;
    acc.correct += r.correct ? 1 : 0;
    if (r.judge) {
      acc.judged += 1;
      acc.judge_sum += r.judge->overall;
    }
  }

  std::vector<AggregateRow> rows;
  rows.reserve(cells.size());
  for (const auto& [key, acc] : cells) {
    AggregateRow row;
    row.category = acc.category;
    row.model_id = key.model;
    row.method = static_cast<Method>(key.method);
    row.n = acc.n;
    row.accuracy = static_cast<double>(acc.correct) / static_cast<double>(acc.n);
    if (acc.judged > 0) row.judge_mean = acc.judge_sum / static_cast<double>(acc.judged);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace furrow::eval
