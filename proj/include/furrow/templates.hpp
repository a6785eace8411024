#pragma once

// Prompt templates with {{placeholder}} substitution. Defaults are embedded;
// any of them can be overridden per run. Rendering is strict: an override
// that references a placeholder the call site does not provide raises
// TemplateError instead of emitting a half-filled prompt.

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "furrow/errors.hpp"

namespace furrow::strategy {

namespace templates {

inline constexpr std::string_view kSystemPreamble =
    "You are an experienced agricultural machinery management consultant. "
    "Ground every recommendation in the information provided, and be specific "
    "about diagnostic steps, schedules, and adjustments.";

inline constexpr std::string_view kInitialHeader =
    "Describe the current conditions of the agricultural field, including "
    "weather, soil moisture, and crop type. Also, provide details about the "
    "machinery being used, including its model, age, and any known issues.";

inline constexpr std::string_view kContextBlock =
    "Known information:\n{{context_lines}}";

inline constexpr std::string_view kQuestionSection = "Question: {{question}}";

inline constexpr std::string_view kFollowup =
    "Given the {{issue}} reported in the {{machinery}}, what are the "
    "recommended diagnostic steps and potential solutions?";

inline constexpr std::string_view kCotInstruction =
    "Think through the problem in numbered logical steps, then state the "
    "final recommendation.";

inline constexpr std::string_view kThotPass1 =
    "Walk through the context in manageable parts, summarizing and analyzing "
    "each part as you go.";

inline constexpr std::string_view kThotPass2 =
    "Given that analysis, state the final recommendation.";

inline constexpr std::string_view kSynthesis =
    "Synthesize the findings above into a single actionable recommendation.";

inline constexpr std::string_view kExtract =
    "Review the assistant's latest answer below. List up to {{max_items}} "
    "unresolved issues or areas that need deeper investigation, one per line, "
    "each line exactly in the form \"- <short issue label> | <verbatim quote "
    "from the answer>\". If there are none, reply with the single word "
    "\"none\".\n\nAnswer under review:\n{{response}}";

}  // namespace templates

/// Names accepted in template_overrides.
inline const std::vector<std::string>& template_names() {
  static const std::vector<std::string> names = {
      "system_preamble", "initial_header", "context_block", "question_section",
      "followup",        "cot_instruction", "thot_pass1",   "thot_pass2",
      "synthesis",       "extract"};
  return names;
}

inline std::string default_template(std::string_view name) {
  using namespace templates;
  if (name == "system_preamble") return std::string(kSystemPreamble);
  if (name == "initial_header") return std::string(kInitialHeader);
  if (name == "context_block") return std::string(kContextBlock);
  if (name == "question_section") return std::string(kQuestionSection);
  if (name == "followup") return std::string(kFollowup);
  if (name == "cot_instruction") return std::string(kCotInstruction);
  if (name == "thot_pass1") return std::string(kThotPass1);
  if (name == "thot_pass2") return std::string(kThotPass2);
  if (name == "synthesis") return std::string(kSynthesis);
  if (name == "extract") return std::string(kExtract);
  throw Error(ErrorKind::Template, "unknown template name '" + std::string(name) + "'");
}

/// Substitutes every {{key}} from vars. Unknown placeholders are an error.
inline std::string render_template(std::string_view text,
                                   const std::map<std::string, std::string>& vars) {
  std::string out;
  out.reserve(text.size());
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto open = text.find("{{", pos);
    if (open == std::string_view::npos) {
      out.append(text.substr(pos));
      break;
    }
    auto close = text.find("}}", open + 2);
    if (close == std::string_view::npos) {
      out.append(text.substr(pos));
      break;
    }
    out.append(text.substr(pos, open - pos));
    std::string key(text.substr(open + 2, close - open - 2));
    auto it = vars.find(key);
    if (it == vars.end()) {
      throw Error(ErrorKind::Template, "unknown placeholder {{" + key + "}}");
    }
    out.append(it->second);
    pos = close + 2;
  }
  return out;
}

/// Resolves a template by name against a set of overrides.
inline std::string resolve_template(std::string_view name,
                                    const std::map<std::string, std::string>& overrides) {
  auto it = overrides.find(std::string(name));
  if (it != overrides.end()) return it->second;
  return default_template(name);
}

}  // namespace furrow::strategy
