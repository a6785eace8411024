#include <catch2/catch_amalgamated.hpp>

#include <furrow/domain.hpp>

#include <random>
#include <set>
#include <string>
#include <vector>

using namespace furrow;
using nlohmann::json;

TEST_CASE("canonicalize_text basic forms") {
  CHECK(canonicalize_text("Hydraulic  Pump-Pressure!") == "hydraulic pump pressure");
  CHECK(canonicalize_text("") == "");
  CHECK(canonicalize_text("   \t\n  ") == "");
  CHECK(canonicalize_text("checking the hydraulic fluid levels,") ==
        "checking the hydraulic fluid levels");
  CHECK(canonicalize_text("5075E") == "5075e");
  CHECK(canonicalize_text("John Deere 5075E") == "john deere 5075e");
  CHECK(canonicalize_text("a,b;c.d") == "a b c d");
  CHECK(canonicalize_text("- leading dash") == "leading dash");
}

TEST_CASE("canonicalize_text composes Latin accents before folding") {
  // "café" composed (U+00E9) vs decomposed (e + U+0301)
  std::string composed = "caf\xc3\xa9";
  std::string decomposed = "cafe\xcc\x81";
  CHECK(canonicalize_text(composed) == canonicalize_text(decomposed));
  // uppercase variants fold to the same string as well
  std::string upper_composed = "CAF\xc3\x89";
  std::string upper_decomposed = "CAFE\xcc\x81";
  CHECK(canonicalize_text(upper_composed) == canonicalize_text(composed));
  CHECK(canonicalize_text(upper_decomposed) == canonicalize_text(composed));
}

TEST_CASE("canonicalize_text handles invalid UTF-8 deterministically") {
  std::string junk = "abc\xff\xfe def";
  std::string once = canonicalize_text(junk);
  std::string twice = canonicalize_text(junk);
  CHECK(once == twice);
  CHECK(canonicalize_text(once) == once);
}

TEST_CASE("canonicalize_text is idempotent on random inputs") {
  std::mt19937 rng(20240817u);
  std::uniform_int_distribution<int> len_dist(0, 64);
  std::uniform_int_distribution<int> byte_dist(0, 255);
  for (int i = 0; i < 1200; ++i) {
    std::string s;
    int n = len_dist(rng);
    for (int k = 0; k < n; ++k) s.push_back(static_cast<char>(byte_dist(rng)));
    std::string once = canonicalize_text(s);
    INFO("case " << i);
    CHECK(canonicalize_text(once) == once);
    // canonical output is lowercase ASCII-ish words separated by single spaces
    if (!once.empty()) {
      CHECK(once.front() != ' ');
      CHECK(once.back() != ' ');
      CHECK(once.find("  ") == std::string::npos);
    }
  }
}

TEST_CASE("category keys, display names, and ranks") {
  Category md{CategoryKind::MachineryDiagnostics, ""};
  Category ms{CategoryKind::MaintenanceScheduling, ""};
  Category ea{CategoryKind::EnvironmentalAdjustment, ""};
  Category other{CategoryKind::Other, "pest_management"};

  CHECK(category_key(md) == "machinery_diagnostics");
  CHECK(category_key(ms) == "maintenance_scheduling");
  CHECK(category_key(ea) == "environmental_adjustment");
  CHECK(category_key(other) == "pest_management");

  CHECK(category_display_name(md) == "Machinery Diagnostics");
  CHECK(category_display_name(ms) == "Maintenance Scheduling");
  CHECK(category_display_name(ea) == "Environmental Adjustment");

  CHECK(category_rank(md) < category_rank(ms));
  CHECK(category_rank(ms) < category_rank(ea));
  CHECK(category_rank(ea) < category_rank(other));

  CHECK(parse_category("machinery_diagnostics").kind == CategoryKind::MachineryDiagnostics);
  CHECK(parse_category("maintenance_scheduling").kind == CategoryKind::MaintenanceScheduling);
  CHECK(parse_category("environmental_adjustment").kind == CategoryKind::EnvironmentalAdjustment);
  Category parsed_other = parse_category("pest_management");
  CHECK(parsed_other.kind == CategoryKind::Other);
  CHECK(parsed_other.other == "pest_management");
}

TEST_CASE("method keys round-trip and display names match the report labels") {
  CHECK(method_key(Method::Base) == "base");
  CHECK(method_key(Method::CoT) == "cot");
  CHECK(method_key(Method::ThoT) == "thot");
  CHECK(method_key(Method::MultiRound) == "multiround");

  for (Method m : kAllMethods) {
    CHECK(parse_method(method_key(m)) == m);
  }
  CHECK(parse_method("BASE") == Method::Base);
  CHECK_THROWS_AS(parse_method("zigzag"), Error);

  CHECK(method_display_name(Method::Base) == "Base Model");
  CHECK(method_display_name(Method::CoT) == "CoT");
  CHECK(method_display_name(Method::ThoT) == "ThoT");
  CHECK(method_display_name(Method::MultiRound) == "Our Method");
}

static Scenario make_scenario() {
  Scenario s;
  s.id = "s01-hydraulics";
  s.category = Category{CategoryKind::MachineryDiagnostics, ""};
  s.context = {{"weather", "sunny, 25 C"},
               {"machinery_model", "John Deere 5075E tractor"},
               {"known_issues", "a history of hydraulic system issues"}};
  s.question = "What should the operator check first?";
  s.reference_answer = "Check hydraulic fluid levels, hoses, and pump pressure.";
  s.answer_keywords = {"hydraulic fluid levels", "hoses", "pump pressure"};
  s.source = "authored sample";
  return s;
}

TEST_CASE("validate_scenario reports exact violations") {
  Scenario ok = make_scenario();
  CHECK(validate_scenario(ok).empty());

  Scenario no_id = ok;
  no_id.id = "";
  auto v1 = validate_scenario(no_id);
  REQUIRE(v1.size() == 1);
  CHECK(v1[0] == "id empty");

  Scenario no_kw = ok;
  no_kw.answer_keywords.clear();
  auto v2 = validate_scenario(no_kw);
  REQUIRE(v2.size() == 1);
  CHECK(v2[0] == "answer_keywords empty");

  Scenario blank_kw = ok;
  blank_kw.answer_keywords = {"hoses", "!!!"};
  auto v3 = validate_scenario(blank_kw);
  REQUIRE(v3.size() == 1);
  CHECK(v3[0] == "keyword empty after canonicalization: \"!!!\"");

  Scenario both = ok;
  both.id = "";
  both.answer_keywords = {};
  CHECK(validate_scenario(both).size() == 2);
}

TEST_CASE("scenario JSON round-trips and rejects unknown fields") {
  Scenario s = make_scenario();
  json j = s;
  Scenario back = j.get<Scenario>();
  CHECK(back == s);

  json extra = j;
  extra["surprise"] = 1;
  CHECK_THROWS_AS(extra.get<Scenario>(), Error);
  try {
    extra.get<Scenario>();
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Parse);
    CHECK(std::string(e.what()).find("surprise") != std::string::npos);
  }

  json bad_context = j;
  bad_context["context"] = json::array({json::array({"only_one"})});
  CHECK_THROWS_AS(bad_context.get<Scenario>(), Error);

  // source is optional
  json no_source = j;
  no_source.erase("source");
  Scenario without = no_source.get<Scenario>();
  CHECK(without.source.empty());
}

TEST_CASE("chat message constructors set roles") {
  CHECK(system_message("a").role == Role::System);
  CHECK(user_message("b").role == Role::User);
  CHECK(assistant_message("c").role == Role::Assistant);
  CHECK(role_key(Role::System) == "system");
  CHECK(role_key(Role::User) == "user");
  CHECK(role_key(Role::Assistant) == "assistant");
  CHECK(parse_role("assistant") == Role::Assistant);
  CHECK_THROWS_AS(parse_role("robot"), Error);
}

static Transcript make_transcript() {
  Transcript t;
  t.scenario_id = "s01";
  t.model_id = "demo-model";
  t.method = Method::Base;
  ModelCall call;
  call.request = {system_message("sys"), user_message("hello")};
  call.response = assistant_message("world");
  call.latency_ms = 12.5;
  call.prompt_tokens = 4;
  call.completion_tokens = 2;
  call.auxiliary = false;
  t.calls = {call};
  t.final_answer = "world";
  t.created_at = "2026-08-17T00:00:00Z";
  return t;
}

TEST_CASE("transcript JSON round-trips") {
  Transcript t = make_transcript();
  json j = t;
  Transcript back = j.get<Transcript>();
  CHECK(back == t);
  CHECK(j["method"] == "base");
  CHECK(j["calls"][0]["auxiliary"] == false);
}

TEST_CASE("main_call_count excludes auxiliary calls") {
  Transcript t = make_transcript();
  ModelCall aux = t.calls[0];
  aux.auxiliary = true;
  t.calls.push_back(aux);
  t.calls.push_back(t.calls[0]);
  t.final_answer = t.calls.back().response.content;
  CHECK(t.calls.size() == 3);
  CHECK(t.main_call_count() == 2);
}

TEST_CASE("validate_transcript reports structural problems") {
  Transcript ok = make_transcript();
  CHECK(validate_transcript(ok).empty());

  Transcript empty = ok;
  empty.calls.clear();
  auto v = validate_transcript(empty);
  REQUIRE(v.size() == 1);
  CHECK(v[0] == "calls empty");

  Transcript no_req = ok;
  no_req.calls[0].request.clear();
  v = validate_transcript(no_req);
  REQUIRE_FALSE(v.empty());
  CHECK(v[0] == "call 0: empty request");

  Transcript wrong_tail = ok;
  wrong_tail.calls[0].request = {system_message("sys"), user_message("q"),
                                 assistant_message("a")};
  v = validate_transcript(wrong_tail);
  REQUIRE_FALSE(v.empty());
  CHECK(v[0] == "call 0: last request message not User");

  Transcript non_alternating = ok;
  non_alternating.calls[0].request = {system_message("sys"), user_message("q"),
                                      user_message("q2")};
  v = validate_transcript(non_alternating);
  REQUIRE_FALSE(v.empty());
  CHECK(v[0].find("roles do not alternate") != std::string::npos);

  Transcript blank_msg = ok;
  blank_msg.calls[0].request[1].content = "";
  v = validate_transcript(blank_msg);
  REQUIRE_FALSE(v.empty());
  CHECK(v[0].find("empty message content") != std::string::npos);

  Transcript stale_final = ok;
  stale_final.final_answer = "something else";
  v = validate_transcript(stale_final);
  REQUIRE_FALSE(v.empty());
  CHECK(v[0] == "final_answer differs from last response");
}

TEST_CASE("evaluation record JSON round-trips with and without a judge score") {
  EvaluationRecord r;
  r.scenario_id = "s01";
  r.model_id = "demo-model";
  r.method = Method::MultiRound;
  r.correct = true;
  r.coverage = 1.0;
  r.transcript_ref = "demo-model/multiround/s01.json";

  json j = r;
  CHECK(j["judge"].is_null());
  EvaluationRecord back = j.get<EvaluationRecord>();
  CHECK(back == r);

  r.judge = JudgeScore{4.9, 4.8, 4.7, 4.8, "Relevance: 4.9\n..."};
  json j2 = r;
  CHECK(j2["judge"]["overall"] == 4.8);
  EvaluationRecord back2 = j2.get<EvaluationRecord>();
  CHECK(back2 == r);
}

TEST_CASE("now_utc_iso8601 shape") {
  std::string ts = now_utc_iso8601();
  REQUIRE(ts.size() == 20);
  CHECK(ts[4] == '-');
  CHECK(ts[7] == '-');
  CHECK(ts[10] == 'T');
  CHECK(ts[13] == ':');
  CHECK(ts[16] == ':');
  CHECK(ts.back() == 'Z');
  CHECK(ts.substr(0, 2) == "20");
}
