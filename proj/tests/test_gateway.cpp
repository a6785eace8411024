#include <catch2/catch_amalgamated.hpp>

#include <furrow/detail/sha256.hpp>
#include <furrow/gateway.hpp>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <thread>
#include <unistd.h>
#include <vector>

using namespace furrow;
using namespace furrow::llm;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static std::atomic<int> counter{0};
    path = fs::temp_directory_path() /
           ("furrow_gw_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string ok_body(const std::string& content, int pt = 5, int ct = 7) {
  json j{{"choices", json::array({json{{"message", json{{"content", content}}}}})},
         {"usage", json{{"prompt_tokens", pt}, {"completion_tokens", ct}}}};
  return j.dump();
}

CompletionRequest hello_request() {
  CompletionRequest req;
  req.messages = {user_message("hello")};
  return req;
}

}  // namespace

TEST_CASE("sha256 matches published test vectors") {
  CHECK(detail::sha256_hex("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(detail::sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(detail::sha256_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
  CHECK(detail::sha256_hex("The quick brown fox jumps over the lazy dog") ==
        "d7a8fbb307d7809469ca9abcb0082e4f8d5651e46d3cdb762d02d0bf37c9e592");
  CHECK(detail::sha256_hex(std::string(1000000, 'a')) ==
        "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0");
}

TEST_CASE("canonical request serialization is frozen") {
  CompletionRequest req = hello_request();
  CHECK(canonical_request_json(req, "m") ==
        R"({"max_tokens":null,"messages":[{"content":"hello","role":"user"}],)"
        R"("model":"m","seed":null,"temperature":0.0})");
  // digest of the line above, computed with an independent sha256 implementation
  CHECK(request_digest(req, "m") ==
        "5f74b2b2a3b4076effc18ac15816b1a9336c13e2c19c505e8c585284db7bdac2");
}

TEST_CASE("request digest is deterministic and input-sensitive") {
  CompletionRequest req = hello_request();
  std::string base = request_digest(req, "m");
  CHECK(request_digest(req, "m") == base);
  REQUIRE(base.size() == 64);

  CompletionRequest warm = req;
  warm.temperature = 0.7;
  CHECK(request_digest(warm, "m") != base);

  CHECK(request_digest(req, "other-model") != base);

  CompletionRequest longer = req;
  longer.messages.push_back(assistant_message("hi"));
  longer.messages.push_back(user_message("more"));
  CHECK(request_digest(longer, "m") != base);

  CompletionRequest capped = req;
  capped.max_tokens = 256;
  CHECK(request_digest(capped, "m") != base);

  CompletionRequest seeded = req;
  seeded.seed = 7;
  CHECK(request_digest(seeded, "m") != base);
}

TEST_CASE("scripted queue pops in order and reports token estimates") {
  Backend b = Backend::scripted_queue({"first", "second"}, "demo-model");
  CHECK(b.kind() == "scripted");
  CHECK(b.model_name() == "demo-model");
  CHECK(b.identity() == "scripted:demo-model");

  CompletionRequest req;
  req.messages = {system_message("sys"), user_message("hello")};
  CompletionResponse r1 = b.complete(req);
  CHECK(r1.content == "first");
  CHECK_FALSE(r1.from_cache);
  // 3 + 5 prompt chars -> ceil(8 / 4) = 2 tokens; "first" -> ceil(5 / 4) = 2
  CHECK(r1.prompt_tokens == 2);
  CHECK(r1.completion_tokens == 2);

  CHECK(b.complete(req).content == "second");
  CHECK_THROWS_AS(b.complete(req), Error);
  try {
    b.complete(req);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ScriptEmpty);
    CHECK(std::string(e.what()).find("scripted queue empty") != std::string::npos);
  }
}

TEST_CASE("scripted rules match substrings of the last user message") {
  Backend b = Backend::scripted_rules(
      {{"hydraulic", "check the pump"}, {"engine", "check the coolant"}}, "demo-model");

  CompletionRequest req;
  req.messages = {user_message("We see hydraulic pressure drops on the loader.")};
  CHECK(b.complete(req).content == "check the pump");

  req.messages = {user_message("the engine overheats"), assistant_message("noted"),
                  user_message("any advice on the engine?")};
  CHECK(b.complete(req).content == "check the coolant");

  req.messages = {user_message("nothing matches this"),};
  try {
    b.complete(req);
    FAIL("expected ScriptEmpty");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ScriptEmpty);
    CHECK(std::string(e.what()).find("no scripted rule matched") != std::string::npos);
  }
}

TEST_CASE("scripted backend loads from its JSON file form, queue before rules") {
  TempDir tmp;
  fs::path script = tmp.path / "script.json";
  {
    json j{{"queue", json::array({"one"})},
           {"rules", json::array({json{{"trigger", "two"}, {"content", "matched two"}}})}};
    std::ofstream out(script);
    out << j.dump();
  }
  Backend b = Backend::scripted_from_file(script, "demo-model");
  CompletionRequest req;
  // first request matches the rule, yet the queued entry wins while one is left
  req.messages = {user_message("round two")};
  CHECK(b.complete(req).content == "one");
  CHECK(b.complete(req).content == "matched two");

  CHECK_THROWS_AS(Backend::scripted_from_file(tmp.path / "missing.json", "m"), Error);
}

TEST_CASE("empty request is rejected before reaching any backend") {
  Backend b = Backend::scripted_queue({"x"});
  CompletionRequest req;
  try {
    b.complete(req);
    FAIL("expected Validation");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Validation);
  }
}

TEST_CASE("replay misses name the digest and model") {
  TempDir tmp;
  fs::path fixture = tmp.path / "fixture.json";
  {
    std::ofstream out(fixture);
    out << "{}";
  }
  Backend b = Backend::replay(fixture, "demo-model");
  CHECK(b.kind() == "replay");
  CompletionRequest req = hello_request();
  try {
    b.complete(req);
    FAIL("expected FixtureMiss");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::FixtureMiss);
    std::string msg = e.what();
    CHECK(msg.find(request_digest(req, "demo-model")) != std::string::npos);
    CHECK(msg.find("demo-model") != std::string::npos);
  }
  CHECK_THROWS_AS(Backend::replay(tmp.path / "missing.json", "m"), Error);
}

TEST_CASE("recorded scripted traffic replays byte for byte") {
  TempDir tmp;
  fs::path fixture = tmp.path / "fixture.json";

  std::mt19937 rng(99173u);
  std::uniform_int_distribution<int> word(0, 9);
  std::uniform_int_distribution<int> turns(1, 3);
  auto random_text = [&](int words) {
    static const char* vocab[] = {"pump",  "belt",   "field", "wheat", "dry",
                                  "hose",  "filter", "check", "winds", "soil"};
    std::string s;
    for (int i = 0; i < words; ++i) {
      if (!s.empty()) s += ' ';
      s += vocab[word(rng)];
    }
    return s;
  };

  std::vector<CompletionRequest> requests;
  std::vector<std::string> answers;
  for (int i = 0; i < 50; ++i) {
    CompletionRequest req;
    int n = turns(rng);
    for (int t = 0; t < n; ++t) {
      req.messages.push_back(user_message(random_text(4) + " #" + std::to_string(i) + "." +
                                          std::to_string(t)));
      if (t + 1 < n) req.messages.push_back(assistant_message(random_text(3)));
    }
    requests.push_back(req);
    answers.push_back(random_text(6));
  }

  auto recorder = std::make_shared<FixtureRecorder>();
  Backend scripted = Backend::scripted_queue(answers, "demo-model");
  scripted.attach_recorder(recorder);
  for (const auto& req : requests) scripted.complete(req);
  CHECK(recorder->size() == requests.size());
  recorder->save(fixture);

  Backend replay = Backend::replay(fixture, "demo-model");
  for (std::size_t i = 0; i < requests.size(); ++i) {
    CompletionResponse resp = replay.complete(requests[i]);
    INFO("request " << i);
    CHECK(resp.content == answers[i]);
  }
}

TEST_CASE("recorder save merges into an existing fixture") {
  TempDir tmp;
  fs::path fixture = tmp.path / "fixture.json";
  {
    std::ofstream out(fixture);
    out << R"({"preexisting": {"content": "kept", "prompt_tokens": 1, "completion_tokens": 1}})";
  }
  FixtureRecorder rec;
  CompletionResponse resp;
  resp.content = "new entry";
  rec.record("fresh", resp);
  rec.save(fixture);

  std::ifstream in(fixture);
  json j = json::parse(in);
  CHECK(j.contains("preexisting"));
  CHECK(j.contains("fresh"));
  CHECK(j["preexisting"]["content"] == "kept");
  CHECK(j["fresh"]["content"] == "new entry");
}

TEST_CASE("response cache round-trips under its content-addressed layout") {
  TempDir tmp;
  ResponseCache cache(tmp.path / "cache");

  std::string digest = detail::sha256_hex("entry");
  CHECK_FALSE(cache.get(digest).has_value());

  CompletionResponse resp;
  resp.content = "cached answer";
  resp.prompt_tokens = 11;
  resp.completion_tokens = 13;
  cache.put(digest, resp);

  CHECK(fs::exists(tmp.path / "cache" / digest.substr(0, 2) / (digest + ".json")));

  auto hit = cache.get(digest);
  REQUIRE(hit.has_value());
  CHECK(hit->content == "cached answer");
  CHECK(hit->prompt_tokens == 11);
  CHECK(hit->completion_tokens == 13);
  CHECK(hit->from_cache);
}

TEST_CASE("response cache stores distinct entries independently") {
  TempDir tmp;
  ResponseCache cache(tmp.path / "cache");
  const int n = 200;
  for (int i = 0; i < n; ++i) {
    CompletionResponse resp;
    resp.content = "answer " + std::to_string(i);
    resp.prompt_tokens = i;
    resp.completion_tokens = i + 1;
    cache.put(detail::sha256_hex("key" + std::to_string(i)), resp);
  }
  for (int i = 0; i < n; ++i) {
    auto hit = cache.get(detail::sha256_hex("key" + std::to_string(i)));
    REQUIRE(hit.has_value());
    INFO("entry " << i);
    CHECK(hit->content == "answer " + std::to_string(i));
    CHECK(hit->prompt_tokens == i);
  }
}

TEST_CASE("http backend retries transient failures with exponential backoff") {
  std::atomic<int> calls{0};
  std::vector<std::chrono::milliseconds> sleeps;

  HttpBackend hb;
  hb.endpoint.base_url = "http://api.test/v1";
  hb.endpoint.model_name = "m";
  hb.endpoint.retry = {3, 100, 2.0};
  hb.transport = [&](const std::string& url, const std::string& body, const std::string& token,
                     double) -> HttpResult {
    CHECK(url == "http://api.test/v1/chat/completions");
    CHECK(token.empty());
    json parsed = json::parse(body);
    CHECK(parsed["model"] == "m");
    int n = ++calls;
    if (n <= 2) return {429, "slow down", false, ""};
    return {200, ok_body("made it"), false, ""};
  };
  hb.sleeper = [&](std::chrono::milliseconds d) { sleeps.push_back(d); };

  Backend b = Backend::http(std::move(hb));
  CompletionResponse resp = b.complete(hello_request());
  CHECK(resp.content == "made it");
  CHECK(resp.prompt_tokens == 5);
  CHECK(resp.completion_tokens == 7);
  CHECK(calls.load() == 3);
  REQUIRE(sleeps.size() == 2);
  CHECK(sleeps[0] == std::chrono::milliseconds(100));
  CHECK(sleeps[1] == std::chrono::milliseconds(200));
}

TEST_CASE("http backend fails fast on non-transient status") {
  std::atomic<int> calls{0};
  HttpBackend hb;
  hb.endpoint.base_url = "http://api.test/v1";
  hb.endpoint.model_name = "m";
  hb.transport = [&](const std::string&, const std::string&, const std::string&,
                     double) -> HttpResult {
    ++calls;
    return {400, "bad request", false, ""};
  };
  hb.sleeper = [](std::chrono::milliseconds) {};

  Backend b = Backend::http(std::move(hb));
  try {
    b.complete(hello_request());
    FAIL("expected Http error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Http);
    CHECK(std::string(e.what()).find("HTTP 400") != std::string::npos);
  }
  CHECK(calls.load() == 1);
}

TEST_CASE("http backend surfaces exhaustion with the last cause") {
  std::atomic<int> calls{0};
  HttpBackend hb;
  hb.endpoint.base_url = "http://api.test/v1";
  hb.endpoint.model_name = "m";
  hb.endpoint.retry = {3, 10, 2.0};
  hb.transport = [&](const std::string&, const std::string&, const std::string&,
                     double) -> HttpResult {
    ++calls;
    if (calls.load() < 3) return {0, "", true, "connection refused"};
    return {503, "unavailable", false, ""};
  };
  hb.sleeper = [](std::chrono::milliseconds) {};

  Backend b = Backend::http(std::move(hb));
  try {
    b.complete(hello_request());
    FAIL("expected Exhausted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Exhausted);
    std::string msg = e.what();
    CHECK(msg.find("3 attempts failed") != std::string::npos);
    CHECK(msg.find("HTTP 503") != std::string::npos);
  }
  CHECK(calls.load() == 3);
}

TEST_CASE("http backend requires the configured auth token") {
  ::unsetenv("FURROW_TEST_TOKEN");
  HttpBackend hb;
  hb.endpoint.base_url = "http://api.test/v1";
  hb.endpoint.model_name = "m";
  hb.endpoint.auth_token_env = "FURROW_TEST_TOKEN";
  hb.transport = [](const std::string&, const std::string&, const std::string&,
                    double) -> HttpResult {
    return {200, "{}", false, ""};
  };
  hb.sleeper = [](std::chrono::milliseconds) {};
  Backend b = Backend::http(std::move(hb));
  try {
    b.complete(hello_request());
    FAIL("expected AuthMissing");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::AuthMissing);
    CHECK(std::string(e.what()).find("FURROW_TEST_TOKEN") != std::string::npos);
  }

  ::setenv("FURROW_TEST_TOKEN", "secret-token", 1);
  std::string seen_token;
  HttpBackend hb2;
  hb2.endpoint.base_url = "http://api.test/v1";
  hb2.endpoint.model_name = "m";
  hb2.endpoint.auth_token_env = "FURROW_TEST_TOKEN";
  hb2.transport = [&](const std::string&, const std::string&, const std::string& token,
                      double) -> HttpResult {
    seen_token = token;
    return {200, ok_body("authed"), false, ""};
  };
  hb2.sleeper = [](std::chrono::milliseconds) {};
  Backend b2 = Backend::http(std::move(hb2));
  CHECK(b2.complete(hello_request()).content == "authed");
  CHECK(seen_token == "secret-token");
  ::unsetenv("FURROW_TEST_TOKEN");
}

TEST_CASE("http backend writes through its cache and serves repeats from it") {
  TempDir tmp;
  auto cache = std::make_shared<ResponseCache>(tmp.path / "cache");
  std::atomic<int> calls{0};

  auto make = [&]() {
    HttpBackend hb;
    hb.endpoint.base_url = "http://api.test/v1";
    hb.endpoint.model_name = "m";
    hb.cache = cache;
    hb.transport = [&](const std::string&, const std::string&, const std::string&,
                       double) -> HttpResult {
      ++calls;
      return {200, ok_body("network answer"), false, ""};
    };
    hb.sleeper = [](std::chrono::milliseconds) {};
    return Backend::http(std::move(hb));
  };

  Backend first = make();
  CompletionResponse r1 = first.complete(hello_request());
  CHECK(r1.content == "network answer");
  CHECK_FALSE(r1.from_cache);
  CHECK(calls.load() == 1);

  Backend second = make();
  CompletionResponse r2 = second.complete(hello_request());
  CHECK(r2.content == "network answer");
  CHECK(r2.from_cache);
  CHECK(calls.load() == 1);  // served from cache, transport untouched
}

TEST_CASE("http factory rejects invalid endpoint limits") {
  HttpBackend hb;
  hb.endpoint.base_url = "http://api.test/v1";
  hb.endpoint.model_name = "m";
  hb.endpoint.max_concurrency = 0;
  hb.transport = [](const std::string&, const std::string&, const std::string&,
                    double) -> HttpResult {
    return {200, "{}", false, ""};
  };
  CHECK_THROWS_AS(Backend::http(std::move(hb)), Error);

  HttpBackend hb2;
  hb2.endpoint.base_url = "http://api.test/v1";
  hb2.endpoint.model_name = "m";
  hb2.endpoint.retry.max_attempts = 0;
  hb2.transport = [](const std::string&, const std::string&, const std::string&,
                     double) -> HttpResult {
    return {200, "{}", false, ""};
  };
  CHECK_THROWS_AS(Backend::http(std::move(hb2)), Error);
}

TEST_CASE("concurrency limiter caps in-flight requests") {
  ConcurrencyLimiter limiter(2);
  std::atomic<int> in_flight{0};
  std::atomic<int> max_seen{0};

  auto worker = [&] {
    for (int i = 0; i < 25; ++i) {
      ConcurrencyLimiter::Guard guard(limiter);
      int now = ++in_flight;
      int prev = max_seen.load();
      while (now > prev && !max_seen.compare_exchange_weak(prev, now)) {
      }
      std::this_thread::sleep_for(std::chrono::microseconds(200));
      --in_flight;
    }
  };

  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();

  CHECK(max_seen.load() <= 2);
  CHECK(max_seen.load() >= 1);
  CHECK(in_flight.load() == 0);
}

TEST_CASE("http limiter is applied per endpoint under concurrency") {
  std::atomic<int> in_flight{0};
  std::atomic<int> max_seen{0};

  HttpBackend hb;
  hb.endpoint.base_url = "http://api.test/v1";
  hb.endpoint.model_name = "m";
  hb.endpoint.max_concurrency = 3;
  hb.transport = [&](const std::string&, const std::string&, const std::string&,
                     double) -> HttpResult {
    int now = ++in_flight;
    int prev = max_seen.load();
    while (now > prev && !max_seen.compare_exchange_weak(prev, now)) {
    }
    std::this_thread::sleep_for(std::chrono::microseconds(300));
    --in_flight;
    return {200, ok_body("ok"), false, ""};
  };
  hb.sleeper = [](std::chrono::milliseconds) {};
  Backend b = Backend::http(std::move(hb));

  std::vector<std::thread> threads;
  for (int t = 0; t < 10; ++t) {
    threads.emplace_back([&, t] {
      CompletionRequest req;
      req.messages = {user_message("req " + std::to_string(t))};
      b.complete(req);
    });
  }
  for (auto& t : threads) t.join();
  CHECK(max_seen.load() <= 3);
}
