// Regenerates the bundled replay fixture. Every strategy runs against
// authored scripted responses with a recorder attached, so the fixture keys
// are exactly the digests the runner will compute when replaying; judge
// replies are recorded the same way from the generated transcripts.

#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "furrow/evaluate.hpp"
#include "furrow/gateway.hpp"
#include "furrow/store.hpp"
#include "furrow/strategies.hpp"

using namespace furrow;

namespace {

struct CellScript {
  std::string focus_label;
  std::string evidence;  // embedded verbatim in the initial answer
  std::string followup_answer;
};

std::string context_value(const Scenario& s, const std::string& field) {
  for (const auto& [name, value] : s.context) {
    if (name == field) return value;
  }
  return "";
}

// The worked demo case keeps its hand-written texts; the rest are composed.
const std::string kDemoInitial =
    "The agricultural field currently has a temperature of 25°C with 60% humidity. "
    "The soil moisture level is optimal, and the crop being grown is wheat. The machinery "
    "in use is a John Deere 5075E tractor, 5 years old, with a history of hydraulic "
    "system issues.";
const std::string kDemoFollowup =
    "The recommended diagnostic steps for hydraulic system issues in the John Deere 5075E "
    "tractor include checking the hydraulic fluid levels, inspecting hoses and connections "
    "for leaks, and testing the hydraulic pump pressure. Potential solutions may involve "
    "replacing faulty hoses, refilling or replacing hydraulic fluid, and servicing the "
    "hydraulic pump.";

CellScript cell_script(const Scenario& s, std::size_t index) {
  static const std::vector<std::pair<std::string, std::string>> issues = {
      {"hydraulic system issues", "a history of hydraulic system issues"},
      {"engine cooling strain", "the operator log notes engine temperature climbing under full load"},
      {"intermittent row-unit dropouts", "row units have been dropping out intermittently during planting passes"},
      {"boom pressure instability", "boom pressure keeps fluctuating even at constant ground speed"},
      {"overdue 2000-hour service", "the hour meter reads 1900, close to the 2000-hour service window"},
      {"belt slippage", "the belts slipped repeatedly late last season"},
      {"gearbox seep on tower 3", "a slow gearbox seep has been visible on tower 3"},
      {"erratic burner cycling", "the burner cycled erratically through last fall's drying runs"},
      {"saturated seedbed", "the profile is saturated after three days of rain"},
      {"drift exposure", "forecast gusts to 25 km/h raise the drift exposure along field edges"},
      {"heat stress on harvest", "the 35°C heatwave puts both crop and machine under heat stress"},
      {"shallow moisture deficit", "the top 5 cm of the seedbed is dust dry"},
  };
  CellScript cs;
  cs.focus_label = issues.at(index).first;
  cs.evidence = issues.at(index).second;
  if (index == 0) {
    cs.followup_answer = kDemoFollowup;
  } else {
    cs.followup_answer = "Addressing the " + cs.focus_label + " on the " +
                         strategy::machinery_label(s) +
                         ": start with a visual inspection, reproduce the symptom under "
                         "controlled conditions, and work from the cheapest check to the most "
                         "invasive one. Document each finding before the next step, and pull "
                         "the service history for anything that has failed before.";
  }
  return cs;
}

std::string advice_sentence(const Scenario& s, std::size_t n_keywords) {
  if (n_keywords == 0) return "A fuller diagnosis needs the items above confirmed on site.";
  std::string out = "The first checks should cover the " + s.answer_keywords.at(0);
  if (n_keywords >= 2) out += " and the " + s.answer_keywords.at(1);
  out += ".";
  return out;
}

std::string initial_answer(const Scenario& s, const CellScript& cs, std::size_t n_keywords,
                           std::size_t index) {
  if (index == 0) return kDemoInitial;
  return "Field report for the " + context_value(s, "crop") + " operation: weather is " +
         context_value(s, "weather") + ", soil moisture " + context_value(s, "soil_moisture") +
         ". The " + context_value(s, "machinery_model") + " (" +
         context_value(s, "machinery_age") + ") is the main unit in service; " + cs.evidence +
         ". " + advice_sentence(s, n_keywords);
}

std::string cot_answer(const Scenario& s, std::size_t n_keywords) {
  return "Step 1: restate the situation. The " + context_value(s, "machinery_model") +
         " is working " + context_value(s, "crop") + " under " + context_value(s, "weather") +
         ". Step 2: isolate the most likely cause from the reported symptoms. Step 3: plan "
         "the intervention in order of cost. Final recommendation: " +
         advice_sentence(s, n_keywords);
}

std::string thot_pass1(const Scenario& s) {
  return "Part 1, field conditions: " + context_value(s, "weather") + " with soil moisture " +
         context_value(s, "soil_moisture") + ", which frames what the machine can be asked "
         "to do. Part 2, machinery state: the " + context_value(s, "machinery_model") + " (" +
         context_value(s, "machinery_age") + ") with " + context_value(s, "known_issues") +
         ". Part 3, open questions: whether the symptom reproduces under controlled load and "
         "what the service records show.";
}

std::string thot_answer(const Scenario& s, std::size_t n_keywords) {
  return "Taking the part-by-part analysis together, the priority is clear. " +
         advice_sentence(s, n_keywords);
}

std::string judge_reply(Method m) {
  switch (m) {
    case Method::Base: return "Relevance: 3.6\nCoherence: 3.4\nApplicability: 3.5\nOverall: 3.5";
    case Method::CoT: return "Relevance: 4.1\nCoherence: 4.0\nApplicability: 3.9\nOverall: 4.0";
    case Method::ThoT: return "Relevance: 4.4\nCoherence: 4.3\nApplicability: 4.2\nOverall: 4.3";
    case Method::MultiRound:
      return "Relevance: 4.9\nCoherence: 4.8\nApplicability: 4.7\nOverall: 4.8";
  }
  return "";
}

// Planned keyword coverage per cell; the spread keeps every method's
// aggregate distinct and strictly ordered.
std::size_t keywords_for(Method m, std::size_t i) {
  switch (m) {
    case Method::Base:
      if (i == 0) return 0;
      return (i == 3 || i == 6 || i == 9) ? 2 : 1;
    case Method::CoT: return i % 3 == 2 ? 1 : 2;
    case Method::ThoT: return i % 4 == 1 ? 1 : 2;
    case Method::MultiRound: return 3;
  }
  return 0;
}

std::vector<std::string> queue_for(const Scenario& s, const CellScript& cs, std::size_t i,
                                   Method m) {
  switch (m) {
    case Method::Base:
      return {initial_answer(s, cs, keywords_for(m, i), i)};
    case Method::CoT:
      return {cot_answer(s, keywords_for(m, i))};
    case Method::ThoT:
      return {thot_pass1(s), thot_answer(s, keywords_for(m, i))};
    case Method::MultiRound:
      return {initial_answer(s, cs, keywords_for(Method::Base, i), i),
              "- " + cs.focus_label + " | " + cs.evidence,
              cs.followup_answer,
              "none",
              s.reference_answer};
  }
  return {};
}

}  // namespace

int main(int argc, char** argv) {
  std::string dataset_path = argc > 1 ? argv[1] : "data/sample_scenarios.jsonl";
  std::string out_path = argc > 2 ? argv[2] : "data/fixtures/demo_replay.json";
  const std::string model = "demo-model";
  const std::string judge = "demo-judge";

  try {
    store::Dataset dataset = store::load_dataset(dataset_path);
    auto recorder = std::make_shared<llm::FixtureRecorder>();

    std::vector<Transcript> transcripts;
    std::map<std::string, const Scenario*> by_id;
    for (std::size_t i = 0; i < dataset.scenarios.size(); ++i) {
      const Scenario& s = dataset.scenarios[i];
      by_id[s.id] = &s;
      CellScript cs = cell_script(s, i);
      for (Method m : kAllMethods) {
        llm::Backend backend = llm::Backend::scripted_queue(queue_for(s, cs, i, m), model);
        backend.attach_recorder(recorder);
        strategy::StrategyConfig cfg;
        cfg.method = m;
        transcripts.push_back(strategy::run_strategy(s, model, cfg, backend));
      }
    }

    for (const Transcript& t : transcripts) {
      llm::Backend backend = llm::Backend::scripted_queue({judge_reply(t.method)}, judge);
      backend.attach_recorder(recorder);
      eval::JudgeConfig jc{backend, "", 1.0, 5.0, 0.0};
      eval::judge_score(t, *by_id.at(t.scenario_id), jc);
    }

    std::filesystem::remove(out_path);
    recorder->save(out_path);
    std::cout << "wrote " << recorder->size() << " fixture entries for " << transcripts.size()
              << " transcripts to " << out_path << "\n";
  } catch (const std::exception& e) {
    std::cerr << "fixture generation failed: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
