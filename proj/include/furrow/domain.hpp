#pragma once

// Shared domain types: consultation scenarios, chat transcripts, judge
// scores, evaluation records, and the text canonicalization every scorer
// relies on. All types are immutable values after construction; operations
// here are pure.

#include <algorithm>
#include <array>
#include <cstdint>
#include <ctime>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "furrow/errors.hpp"

namespace furrow {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Categories and methods

enum class CategoryKind {
  MachineryDiagnostics,
  MaintenanceScheduling,
  EnvironmentalAdjustment,
  Other,
};

/// Closed category set mirroring the benchmark's scenario groups, with an
/// open extension for datasets that go beyond them.
struct Category {
  CategoryKind kind = CategoryKind::Other;
  std::string other;  // set only when kind == Other

  static Category machinery_diagnostics() { return {CategoryKind::MachineryDiagnostics, {}}; }
  static Category maintenance_scheduling() { return {CategoryKind::MaintenanceScheduling, {}}; }
  static Category environmental_adjustment() { return {CategoryKind::EnvironmentalAdjustment, {}}; }
  static Category make_other(std::string label) { return {CategoryKind::Other, std::move(label)}; }

  bool operator==(const Category&) const = default;
};

inline std::string category_key(const Category& c) {
  switch (c.kind) {
    case CategoryKind::MachineryDiagnostics: return "machinery_diagnostics";
    case CategoryKind::MaintenanceScheduling: return "maintenance_scheduling";
    case CategoryKind::EnvironmentalAdjustment: return "environmental_adjustment";
    case CategoryKind::Other: return c.other.empty() ? "other" : c.other;
  }
  return "other";
}

inline std::string category_display_name(const Category& c) {
  switch (c.kind) {
    case CategoryKind::MachineryDiagnostics: return "Machinery Diagnostics";
    case CategoryKind::MaintenanceScheduling: return "Maintenance Scheduling";
    case CategoryKind::EnvironmentalAdjustment: return "Environmental Adjustment";
    case CategoryKind::Other: return c.other.empty() ? "Other" : c.other;
  }
  return "Other";
}

inline Category parse_category(std::string_view key) {
  if (key == "machinery_diagnostics") return Category::machinery_diagnostics();
  if (key == "maintenance_scheduling") return Category::maintenance_scheduling();
  if (key == "environmental_adjustment") return Category::environmental_adjustment();
  return Category::make_other(std::string(key));
}

/// Order used everywhere categories are sorted: the three named groups
/// first, then open-extension categories alphabetically.
inline int category_rank(const Category& c) {
  return static_cast<int>(c.kind);
}

enum class Method { Base, CoT, ThoT, MultiRound };

inline constexpr std::array<Method, 4> kAllMethods = {Method::Base, Method::CoT,
                                                      Method::ThoT, Method::MultiRound};

inline std::string method_key(Method m) {
  switch (m) {
    case Method::Base: return "base";
    case Method::CoT: return "cot";
    case Method::ThoT: return "thot";
    case Method::MultiRound: return "multiround";
  }
  return "base";
}

inline std::string method_display_name(Method m) {
  switch (m) {
    case Method::Base: return "Base Model";
    case Method::CoT: return "CoT";
    case Method::ThoT: return "ThoT";
    case Method::MultiRound: return "Our Method";
  }
  return "Base Model";
}

inline Method parse_method(std::string_view key) {
  std::string folded(key);
  for (char& c : folded) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (folded == "base") return Method::Base;
  if (folded == "cot") return Method::CoT;
  if (folded == "thot") return Method::ThoT;
  if (folded == "multiround") return Method::MultiRound;
  throw Error(ErrorKind::Parse, "unknown method '" + std::string(key) +
                                    "' (expected base|cot|thot|multiround)");
}

// ---------------------------------------------------------------------------
// Time

/// Current time as a UTC ISO-8601 string, the persisted timestamp form.
inline std::string now_utc_iso8601() {
  std::time_t now = std::time(nullptr);
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

// ---------------------------------------------------------------------------
// Text canonicalization

namespace detail {

// Decodes one UTF-8 codepoint at `i`, advancing `i`. Invalid sequences decode
// to U+FFFD one byte at a time so the result is stable under re-runs.
inline std::uint32_t decode_utf8(std::string_view s, std::size_t& i) {
  const auto byte = [&](std::size_t k) { return static_cast<std::uint8_t>(s[k]); };
  std::uint8_t b0 = byte(i);
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  int len = 0;
  std::uint32_t cp = 0;
  if ((b0 & 0xe0) == 0xc0) {
    len = 2;
    cp = b0 & 0x1f;
  } else if ((b0 & 0xf0) == 0xe0) {
    len = 3;
    cp = b0 & 0x0f;
  } else if ((b0 & 0xf8) == 0xf0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    ++i;
    return 0xfffd;
  }
  if (i + len > s.size()) {
    ++i;
    return 0xfffd;
  }
  for (int k = 1; k < len; ++k) {
    std::uint8_t b = byte(i + k);
    if ((b & 0xc0) != 0x80) {
      ++i;
      return 0xfffd;
    }
    cp = (cp << 6) | (b & 0x3f);
  }
  i += len;
  return cp;
}

inline void encode_utf8(std::uint32_t cp, std::string& out) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else {
    out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  }
}

// NFC composition for the Latin ranges that occur in practice here; other
// combining sequences pass through unchanged.
inline std::uint32_t compose_latin(std::uint32_t base, std::uint32_t mark) {
  struct Entry {
    std::uint32_t base, mark, composed;
  };
  static constexpr Entry table[] = {
      {'A', 0x300, 0xc0}, {'A', 0x301, 0xc1}, {'A', 0x302, 0xc2}, {'A', 0x303, 0xc3},
      {'A', 0x308, 0xc4}, {'A', 0x30a, 0xc5}, {'C', 0x327, 0xc7}, {'E', 0x300, 0xc8},
      {'E', 0x301, 0xc9}, {'E', 0x302, 0xca}, {'E', 0x308, 0xcb}, {'I', 0x300, 0xcc},
      {'I', 0x301, 0xcd}, {'I', 0x302, 0xce}, {'I', 0x308, 0xcf}, {'N', 0x303, 0xd1},
      {'O', 0x300, 0xd2}, {'O', 0x301, 0xd3}, {'O', 0x302, 0xd4}, {'O', 0x303, 0xd5},
      {'O', 0x308, 0xd6}, {'U', 0x300, 0xd9}, {'U', 0x301, 0xda}, {'U', 0x302, 0xdb},
      {'U', 0x308, 0xdc}, {'Y', 0x301, 0xdd}, {'a', 0x300, 0xe0}, {'a', 0x301, 0xe1},
      {'a', 0x302, 0xe2}, {'a', 0x303, 0xe3}, {'a', 0x308, 0xe4}, {'a', 0x30a, 0xe5},
      {'c', 0x327, 0xe7}, {'e', 0x300, 0xe8}, {'e', 0x301, 0xe9}, {'e', 0x302, 0xea},
      {'e', 0x308, 0xeb}, {'i', 0x300, 0xec}, {'i', 0x301, 0xed}, {'i', 0x302, 0xee},
      {'i', 0x308, 0xef}, {'n', 0x303, 0xf1}, {'o', 0x300, 0xf2}, {'o', 0x301, 0xf3},
      {'o', 0x302, 0xf4}, {'o', 0x303, 0xf5}, {'o', 0x308, 0xf6}, {'u', 0x300, 0xf9},
      {'u', 0x301, 0xfa}, {'u', 0x302, 0xfb}, {'u', 0x308, 0xfc}, {'y', 0x301, 0xfd},
      {'y', 0x308, 0xff},
  };
  for (const auto& e : table) {
    if (e.base == base && e.mark == mark) return e.composed;
  }
  return 0;
}

inline bool is_whitespace_cp(std::uint32_t cp) {
  return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\f' ||
         cp == '\v' || cp == 0xa0 || (cp >= 0x2000 && cp <= 0x200a) ||
         cp == 0x2028 || cp == 0x2029 || cp == 0x202f || cp == 0x205f || cp == 0x3000;
}

inline bool is_punctuation_cp(std::uint32_t cp) {
  if (cp < 0x80) {
    return (cp >= '!' && cp <= '/') || (cp >= ':' && cp <= '@') ||
           (cp >= '[' && cp <= '`') || (cp >= '{' && cp <= '~');
  }
  // General punctuation block minus its space range, plus the Latin-1
  // punctuation marks.
  if (cp >= 0x2010 && cp <= 0x2027) return true;
  if (cp >= 0x2030 && cp <= 0x205e) return true;
  return cp == 0xa1 || cp == 0xa7 || cp == 0xab || cp == 0xb6 || cp == 0xb7 ||
         cp == 0xbb || cp == 0xbf;
}

inline std::uint32_t to_lower_cp(std::uint32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 0x20;
  // Latin-1 uppercase, skipping the multiplication sign.
  if (cp >= 0xc0 && cp <= 0xde && cp != 0xd7) return cp + 0x20;
  return cp;
}

}  // namespace detail

/// Lowercases, composes Latin combining sequences (NFC for the ranges the
/// corpus uses), replaces punctuation with spaces, collapses whitespace, and
/// trims. Idempotent.
inline std::string canonicalize_text(std::string_view text) {
  // Pass 1: decode + compose.
  std::vector<std::uint32_t> cps;
  cps.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    std::uint32_t cp = detail::decode_utf8(text, i);
    if (!cps.empty() && cp >= 0x300 && cp <= 0x36f) {
      if (std::uint32_t composed = detail::compose_latin(cps.back(), cp); composed != 0) {
        cps.back() = composed;
        continue;
      }
    }
    cps.push_back(cp);
  }

  // Pass 2: lowercase, strip punctuation, collapse whitespace.
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (std::uint32_t cp : cps) {
    if (detail::is_whitespace_cp(cp) || detail::is_punctuation_cp(cp)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    detail::encode_utf8(detail::to_lower_cp(cp), out);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scenario

/// One consultation task: the context a consultant would be given, the
/// question asked, and the material needed to score an answer.
struct Scenario {
  std::string id;
  Category category;
  std::vector<std::pair<std::string, std::string>> context;  // ordered (field, value)
  std::string question;
  std::string reference_answer;
  std::vector<std::string> answer_keywords;
  std::string source;

  bool operator==(const Scenario&) const = default;
};

/// Returns every violated Scenario invariant; an empty list means valid.
/// Uniqueness of ids is a dataset-level check and lives in the store.
inline std::vector<std::string> validate_scenario(const Scenario& s) {
  std::vector<std::string> violations;
  if (s.id.empty()) violations.push_back("id empty");
  if (s.answer_keywords.empty()) violations.push_back("answer_keywords empty");
  for (const auto& kw : s.answer_keywords) {
    if (canonicalize_text(kw).empty()) {
      violations.push_back("keyword empty after canonicalization: \"" + kw + "\"");
    }
  }
  return violations;
}

// ---------------------------------------------------------------------------
// Chat messages and transcripts

enum class Role { System, User, Assistant };

inline std::string role_key(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

inline Role parse_role(std::string_view key) {
  if (key == "system") return Role::System;
  if (key == "user") return Role::User;
  if (key == "assistant") return Role::Assistant;
  throw Error(ErrorKind::Parse, "unknown role '" + std::string(key) + "'");
}

struct ChatMessage {
  Role role = Role::User;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

inline ChatMessage system_message(std::string content) {
  return {Role::System, std::move(content)};
}
inline ChatMessage user_message(std::string content) {
  return {Role::User, std::move(content)};
}
inline ChatMessage assistant_message(std::string content) {
  return {Role::Assistant, std::move(content)};
}

/// One round trip to the model: the full request snapshot and the response.
/// `auxiliary` marks bookkeeping calls (focus-item extraction) that do not
/// count toward a strategy's main call budget.
struct ModelCall {
  std::vector<ChatMessage> request;
  ChatMessage response;
  double latency_ms = 0.0;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  bool auxiliary = false;

  bool operator==(const ModelCall&) const = default;
};

struct Transcript {
  std::string scenario_id;
  std::string model_id;
  Method method = Method::Base;
  std::vector<ModelCall> calls;
  std::string final_answer;
  std::string created_at;  // UTC ISO-8601

  bool operator==(const Transcript&) const = default;

  std::size_t main_call_count() const {
    return static_cast<std::size_t>(
        std::count_if(calls.begin(), calls.end(),
                      [](const ModelCall& c) { return !c.auxiliary; }));
  }
};

/// Checks the Transcript invariants: non-empty calls, alternating roles with
/// a trailing User message in every request, and final_answer matching the
/// last response. Returns violations, empty when the transcript is sound.
inline std::vector<std::string> validate_transcript(const Transcript& t) {
  std::vector<std::string> violations;
  if (t.calls.empty()) {
    violations.push_back("calls empty");
    return violations;
  }
  for (std::size_t c = 0; c < t.calls.size(); ++c) {
    const auto& req = t.calls[c].request;
    if (req.empty()) {
      violations.push_back("call " + std::to_string(c) + ": empty request");
      continue;
    }
    if (req.back().role != Role::User) {
      violations.push_back("call " + std::to_string(c) + ": last request message not User");
    }
    std::size_t start = req.front().role == Role::System ? 1 : 0;
    for (std::size_t m = start; m < req.size(); ++m) {
      Role expected = ((m - start) % 2 == 0) ? Role::User : Role::Assistant;
      if (req[m].role != expected) {
        violations.push_back("call " + std::to_string(c) + ": roles do not alternate at message " +
                             std::to_string(m));
        break;
      }
    }
    for (const auto& msg : t.calls[c].request) {
      if (msg.content.empty()) {
        violations.push_back("call " + std::to_string(c) + ": empty message content");
        break;
      }
    }
  }
  if (t.final_answer != t.calls.back().response.content) {
    violations.push_back("final_answer differs from last response");
  }
  return violations;
}

// ---------------------------------------------------------------------------
// Scores and records

/// Judge rubric result on the 1-5 scale. `overall` is the judge's own stated
/// overall, never recomputed from the sub-scores.
struct JudgeScore {
  double relevance = 0.0;
  double coherence = 0.0;
  double applicability = 0.0;
  double overall = 0.0;
  std::string raw_text;

  bool operator==(const JudgeScore&) const = default;
};

struct EvaluationRecord {
  std::string scenario_id;
  std::string model_id;
  Method method = Method::Base;
  bool correct = false;
  double coverage = 0.0;
  std::optional<JudgeScore> judge;
  std::string transcript_ref;

  bool operator==(const EvaluationRecord&) const = default;
};

/// One cell of the comparison tables: counts and means per (model, method),
/// optionally split by category.
struct AggregateRow {
  std::optional<Category> category;
  std::string model_id;
  Method method = Method::Base;
  std::size_t n = 0;
  double accuracy = 0.0;
  std::optional<double> judge_mean;

  bool operator==(const AggregateRow&) const = default;
};

// ---------------------------------------------------------------------------
// JSON serialization

inline void to_json(json& j, const ChatMessage& m) {
  j = json{{"role", role_key(m.role)}, {"content", m.content}};
}

inline void from_json(const json& j, ChatMessage& m) {
  m.role = parse_role(j.at("role").get<std::string>());
  m.content = j.at("content").get<std::string>();
}

inline void to_json(json& j, const Scenario& s) {
  json ctx = json::array();
  for (const auto& [field, value] : s.context) ctx.push_back(json::array({field, value}));
  j = json{{"id", s.id},
           {"category", category_key(s.category)},
           {"context", std::move(ctx)},
           {"question", s.question},
           {"reference_answer", s.reference_answer},
           {"answer_keywords", s.answer_keywords},
           {"source", s.source}};
}

/// Strict parse: unknown fields are rejected so dataset typos cannot pass
/// silently.
inline void from_json(const json& j, Scenario& s) {
  static const std::vector<std::string> known = {
      "id", "category", "context", "question", "reference_answer", "answer_keywords", "source"};
  if (!j.is_object()) throw Error(ErrorKind::Parse, "scenario must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw Error(ErrorKind::Parse, "unknown scenario field '" + it.key() + "'");
    }
  }
  s.id = j.at("id").get<std::string>();
  s.category = parse_category(j.at("category").get<std::string>());
  s.context.clear();
  for (const auto& pair : j.at("context")) {
    if (!pair.is_array() || pair.size() != 2) {
      throw Error(ErrorKind::Parse, "context entries must be [field, value] pairs");
    }
    s.context.emplace_back(pair[0].get<std::string>(), pair[1].get<std::string>());
  }
  s.question = j.at("question").get<std::string>();
  s.reference_answer = j.at("reference_answer").get<std::string>();
  s.answer_keywords = j.at("answer_keywords").get<std::vector<std::string>>();
  s.source = j.value("source", std::string{});
}

inline void to_json(json& j, const ModelCall& c) {
  j = json{{"request", c.request},
           {"response", c.response},
           {"latency_ms", c.latency_ms},
           {"prompt_tokens", c.prompt_tokens},
           {"completion_tokens", c.completion_tokens},
           {"auxiliary", c.auxiliary}};
}

inline void from_json(const json& j, ModelCall& c) {
  c.request = j.at("request").get<std::vector<ChatMessage>>();
  c.response = j.at("response").get<ChatMessage>();
  c.latency_ms = j.at("latency_ms").get<double>();
  c.prompt_tokens = j.at("prompt_tokens").get<std::int64_t>();
  c.completion_tokens = j.at("completion_tokens").get<std::int64_t>();
  c.auxiliary = j.at("auxiliary").get<bool>();
}

inline void to_json(json& j, const Transcript& t) {
  j = json{{"scenario_id", t.scenario_id}, {"model_id", t.model_id},
           {"method", method_key(t.method)}, {"calls", t.calls},
           {"final_answer", t.final_answer}, {"created_at", t.created_at}};
}

inline void from_json(const json& j, Transcript& t) {
  t.scenario_id = j.at("scenario_id").get<std::string>();
  t.model_id = j.at("model_id").get<std::string>();
  t.method = parse_method(j.at("method").get<std::string>());
  t.calls = j.at("calls").get<std::vector<ModelCall>>();
  t.final_answer = j.at("final_answer").get<std::string>();
  t.created_at = j.at("created_at").get<std::string>();
}

inline void to_json(json& j, const JudgeScore& s) {
  j = json{{"relevance", s.relevance},
           {"coherence", s.coherence},
           {"applicability", s.applicability},
           {"overall", s.overall},
           {"raw_text", s.raw_text}};
}

inline void from_json(const json& j, JudgeScore& s) {
  s.relevance = j.at("relevance").get<double>();
  s.coherence = j.at("coherence").get<double>();
  s.applicability = j.at("applicability").get<double>();
  s.overall = j.at("overall").get<double>();
  s.raw_text = j.value("raw_text", std::string{});
}

inline void to_json(json& j, const EvaluationRecord& r) {
  j = json{{"scenario_id", r.scenario_id}, {"model_id", r.model_id},
           {"method", method_key(r.method)}, {"correct", r.correct},
           {"coverage", r.coverage},         {"transcript_ref", r.transcript_ref}};
  j["judge"] = r.judge ? json(*r.judge) : json(nullptr);
}

inline void from_json(const json& j, EvaluationRecord& r) {
  r.scenario_id = j.at("scenario_id").get<std::string>();
  r.model_id = j.at("model_id").get<std::string>();
  r.method = parse_method(j.at("method").get<std::string>());
  r.correct = j.at("correct").get<bool>();
  r.coverage = j.at("coverage").get<double>();
  r.transcript_ref = j.at("transcript_ref").get<std::string>();
  if (j.contains("judge") && !j.at("judge").is_null()) {
    r.judge = j.at("judge").get<JudgeScore>();
  } else {
    r.judge.reset();
  }
}

}  // namespace furrow
