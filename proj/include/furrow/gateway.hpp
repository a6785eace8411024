#pragma once

// Uniform access to chat-completion endpoints. Three interchangeable
// backends: Http (real network, with retry/limits/cache), Scripted (queued
// responses or substring-triggered rules, for tests and demos), and Replay
// (recorded fixture keyed by request digest, for deterministic runs).
// Scripted and Replay never touch the network.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "furrow/detail/sha256.hpp"
#include "furrow/domain.hpp"
#include "furrow/errors.hpp"

namespace furrow::llm {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Requests and responses

struct RetryPolicy {
  int max_attempts = 3;
  int initial_backoff_ms = 100;
  double multiplier = 2.0;
};

struct ModelEndpoint {
  std::string base_url;        // e.g. "https://api.example.com/v1"
  std::string model_name;
  std::string auth_token_env;  // name of the env var holding the credential
  int max_concurrency = 4;
  double timeout_s = 60.0;
  RetryPolicy retry;
};

struct CompletionRequest {
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  std::optional<int> max_tokens;
  std::optional<int> seed;
};

struct CompletionResponse {
  std::string content;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  double latency_ms = 0.0;
  bool from_cache = false;

  bool operator==(const CompletionResponse&) const = default;
};

// ---------------------------------------------------------------------------
// Request digest

/// Canonical serialization the digest is computed over: one JSON object with
/// lexicographically sorted keys, so equal requests serialize identically on
/// every platform.
inline std::string canonical_request_json(const CompletionRequest& req,
                                          const std::string& model_name) {
  json j;
  j["model"] = model_name;
  j["messages"] = req.messages;
  j["temperature"] = req.temperature;
  j["max_tokens"] = req.max_tokens ? json(*req.max_tokens) : json(nullptr);
  j["seed"] = req.seed ? json(*req.seed) : json(nullptr);
  return j.dump();
}

/// Stable 64-hex-char content hash over (model, messages, sampling params).
inline std::string request_digest(const CompletionRequest& req,
                                  const std::string& model_name) {
  return detail::sha256_hex(canonical_request_json(req, model_name));
}

// ---------------------------------------------------------------------------
// Response cache (content-addressed, one file per entry)

/// Persistent cache under <root>/<first 2 hex>/<digest>.json. Writes go to a
/// temp file in the same directory and are renamed into place, so an entry is
/// either absent or complete.
class ResponseCache {
 public:
  explicit ResponseCache(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const { return root_; }

  void put(const std::string& digest, const CompletionResponse& resp) const {
    fs::path dir = root_ / digest.substr(0, 2);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::Storage, "cannot create cache dir " + dir.string());
    json j{{"content", resp.content},
           {"prompt_tokens", resp.prompt_tokens},
           {"completion_tokens", resp.completion_tokens}};
    atomic_write(dir / (digest + ".json"), j.dump(2));
  }

  std::optional<CompletionResponse> get(const std::string& digest) const {
    fs::path file = root_ / digest.substr(0, 2) / (digest + ".json");
    std::ifstream in(file);
    if (!in) return std::nullopt;
    json j = json::parse(in, nullptr, true);
    CompletionResponse resp;
    resp.content = j.at("content").get<std::string>();
    resp.prompt_tokens = j.at("prompt_tokens").get<std::int64_t>();
    resp.completion_tokens = j.at("completion_tokens").get<std::int64_t>();
    resp.from_cache = true;
    return resp;
  }

  /// Temp-then-rename write, shared with the run store.
  static void atomic_write(const fs::path& target, const std::string& bytes) {
    static std::atomic<std::uint64_t> counter{0};
    fs::path tmp = target;
    tmp += ".tmp." + std::to_string(counter.fetch_add(1)) + "." +
           std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()) & 0xffff);
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error(ErrorKind::Storage, "cannot write " + tmp.string());
      out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      if (!out) throw Error(ErrorKind::Storage, "short write to " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
      fs::remove(tmp, ec);
      throw Error(ErrorKind::Storage, "cannot move into place: " + target.string());
    }
  }

 private:
  fs::path root_;
};

// ---------------------------------------------------------------------------
// Concurrency limiter

/// Bounds the number of in-flight requests per endpoint.
class ConcurrencyLimiter {
 public:
  explicit ConcurrencyLimiter(int limit) : limit_(limit < 1 ? 1 : limit) {}

  class Guard {
   public:
    explicit Guard(ConcurrencyLimiter& limiter) : limiter_(limiter) { limiter_.acquire(); }
    ~Guard() { limiter_.release(); }
    Guard(const Guard&) = delete;
    Guard& operator=(const Guard&) = delete;

   private:
    ConcurrencyLimiter& limiter_;
  };

  void acquire() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return in_flight_ < limit_; });
    ++in_flight_;
  }

  void release() {
    {
      std::lock_guard lock(mutex_);
      --in_flight_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  int limit_;
  int in_flight_ = 0;
};

// ---------------------------------------------------------------------------
// Fixture recorder (record mode for replay fixtures)

/// Captures digest -> response pairs from live calls so they can be saved as
/// a replay fixture.
class FixtureRecorder {
 public:
  void record(const std::string& digest, const CompletionResponse& resp) {
    std::lock_guard lock(mutex_);
    entries_[digest] = resp;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }

  /// Merges into an existing fixture file when one is present.
  void save(const fs::path& path) const {
    json j = json::object();
    {
      std::ifstream in(path);
      if (in) j = json::parse(in, nullptr, true);
    }
    {
      std::lock_guard lock(mutex_);
      for (const auto& [digest, resp] : entries_) {
        j[digest] = json{{"content", resp.content},
                         {"prompt_tokens", resp.prompt_tokens},
                         {"completion_tokens", resp.completion_tokens}};
      }
    }
    if (path.has_parent_path()) {
      std::error_code ec;
      fs::create_directories(path.parent_path(), ec);
    }
    ResponseCache::atomic_write(path, j.dump(2) + "\n");
  }

 private:
  mutable std::mutex mutex_;
  std::map<std::string, CompletionResponse> entries_;
};

// ---------------------------------------------------------------------------
// Backend variants

/// Result of one raw HTTP exchange, as seen by the retry loop.
struct HttpResult {
  int status = 0;
  std::string body;
  bool transport_error = false;  // connect failure, timeout, ...
  std::string error;
};

using Transport = std::function<HttpResult(const std::string& url, const std::string& body,
                                           const std::string& auth_token, double timeout_s)>;
using Sleeper = std::function<void(std::chrono::milliseconds)>;

struct HttpBackend {
  ModelEndpoint endpoint;
  Transport transport;                          // injectable for tests
  Sleeper sleeper;                              // injectable fake clock
  std::shared_ptr<ResponseCache> cache;         // optional
  std::shared_ptr<ConcurrencyLimiter> limiter;  // per endpoint
};

struct ScriptRule {
  std::string trigger;  // substring matched against the last user message
  std::string content;
};

/// Ordered response queue plus an optional rule table consulted once the
/// queue is empty. Queue pops are serialized.
struct ScriptedBackend {
  std::deque<std::string> queue;
  std::vector<ScriptRule> rules;
  std::string model_name = "scripted";
  std::mutex mutex;
};

struct ReplayEntry {
  std::string content;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
};

struct ReplayBackend {
  std::map<std::string, ReplayEntry> entries;
  std::string model_name;
  std::string fixture_path;
};

namespace detail_gw {

inline std::int64_t estimate_tokens(std::string_view text) {
  // Deterministic stand-in used by scripted backends: ~4 chars per token.
  return static_cast<std::int64_t>((text.size() + 3) / 4);
}

inline const std::string* last_user_content(const std::vector<ChatMessage>& messages) {
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->role == Role::User) return &it->content;
  }
  return nullptr;
}

inline CompletionResponse complete_scripted(ScriptedBackend& b, const CompletionRequest& req) {
  std::lock_guard lock(b.mutex);
  std::string content;
  if (!b.queue.empty()) {
    content = std::move(b.queue.front());
    b.queue.pop_front();
  } else {
    const std::string* last_user = last_user_content(req.messages);
    const ScriptRule* matched = nullptr;
    if (last_user) {
      for (const auto& rule : b.rules) {
        if (last_user->find(rule.trigger) != std::string::npos) {
          matched = &rule;
          break;
        }
      }
    }
    if (!matched) {
      throw Error(ErrorKind::ScriptEmpty,
                  b.rules.empty() ? "scripted queue empty" : "no scripted rule matched");
    }
    content = matched->content;
  }
  CompletionResponse resp;
  std::int64_t prompt_chars = 0;
  for (const auto& m : req.messages) prompt_chars += static_cast<std::int64_t>(m.content.size());
  resp.prompt_tokens = (prompt_chars + 3) / 4;
  resp.completion_tokens = estimate_tokens(content);
  resp.content = std::move(content);
  return resp;
}

inline CompletionResponse complete_replay(const ReplayBackend& b, const CompletionRequest& req) {
  std::string digest = request_digest(req, b.model_name);
  auto it = b.entries.find(digest);
  if (it == b.entries.end()) {
    throw Error(ErrorKind::FixtureMiss,
                "no fixture entry for digest " + digest + " (model " + b.model_name + ")");
  }
  CompletionResponse resp;
  resp.content = it->second.content;
  resp.prompt_tokens = it->second.prompt_tokens;
  resp.completion_tokens = it->second.completion_tokens;
  return resp;
}

inline bool transient_status(int status) {
  return status == 429 || (status >= 500 && status < 600);
}

inline CompletionResponse complete_http(HttpBackend& b, const CompletionRequest& req) {
  std::string token;
  if (!b.endpoint.auth_token_env.empty()) {
    const char* value = std::getenv(b.endpoint.auth_token_env.c_str());
    if (!value || !*value) {
      throw Error(ErrorKind::AuthMissing,
                  "environment variable " + b.endpoint.auth_token_env + " is not set");
    }
    token = value;
  }

  std::string digest = request_digest(req, b.endpoint.model_name);
  if (b.cache) {
    if (auto hit = b.cache->get(digest)) return *hit;
  }

  json body{{"model", b.endpoint.model_name},
            {"messages", req.messages},
            {"temperature", req.temperature}};
  if (req.max_tokens) body["max_tokens"] = *req.max_tokens;
  if (req.seed) body["seed"] = *req.seed;
  const std::string url = b.endpoint.base_url + "/chat/completions";
  const std::string payload = body.dump();

  std::optional<ConcurrencyLimiter::Guard> guard;
  if (b.limiter) guard.emplace(*b.limiter);

  const RetryPolicy& retry = b.endpoint.retry;
  double backoff_ms = retry.initial_backoff_ms;
  std::string last_cause = "no attempt made";
  for (int attempt = 1; attempt <= retry.max_attempts; ++attempt) {
    auto started = std::chrono::steady_clock::now();
    HttpResult result = b.transport(url, payload, token, b.endpoint.timeout_s);
    auto elapsed = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - started)
                       .count();

    if (!result.transport_error && result.status >= 200 && result.status < 300) {
      CompletionResponse resp;
      try {
        json r = json::parse(result.body);
        resp.content = r.at("choices").at(0).at("message").at("content").get<std::string>();
        if (r.contains("usage")) {
          resp.prompt_tokens = r["usage"].value("prompt_tokens", std::int64_t{0});
          resp.completion_tokens = r["usage"].value("completion_tokens", std::int64_t{0});
        }
      } catch (const json::exception& e) {
        throw Error(ErrorKind::Http, "malformed completion response: " + std::string(e.what()));
      }
      resp.latency_ms = elapsed;
      if (b.cache) b.cache->put(digest, resp);
      return resp;
    }

    bool transient = result.transport_error || transient_status(result.status);
    last_cause = result.transport_error
                     ? "transport error: " + result.error
                     : "HTTP " + std::to_string(result.status);
    if (!transient) {
      throw Error(ErrorKind::Http, last_cause + " from " + url);
    }
    if (attempt < retry.max_attempts) {
      b.sleeper(std::chrono::milliseconds(static_cast<std::int64_t>(backoff_ms)));
      backoff_ms *= retry.multiplier;
    }
  }
  throw Error(ErrorKind::Exhausted,
              std::to_string(retry.max_attempts) + " attempts failed; last cause: " + last_cause);
}

}  // namespace detail_gw

// ---------------------------------------------------------------------------
// Backend handle

/// Shared, copyable handle over one backend variant. Safe for concurrent use:
/// replay data is immutable, scripted pops are serialized, and HTTP calls go
/// through the per-endpoint limiter.
class Backend {
 public:
  static Backend http(HttpBackend backend) {
    if (backend.endpoint.max_concurrency < 1) {
      throw Error(ErrorKind::Config, "max_concurrency must be >= 1");
    }
    if (backend.endpoint.retry.max_attempts < 1) {
      throw Error(ErrorKind::Config, "retry max_attempts must be >= 1");
    }
    Backend b;
    b.impl_ = std::make_shared<Impl>();
    b.impl_->http = std::make_unique<HttpBackend>(std::move(backend));
    if (!b.impl_->http->limiter) {
      b.impl_->http->limiter =
          std::make_shared<ConcurrencyLimiter>(b.impl_->http->endpoint.max_concurrency);
    }
    if (!b.impl_->http->sleeper) {
      b.impl_->http->sleeper = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    }
    return b;
  }

  static Backend scripted_queue(std::vector<std::string> responses,
                                std::string model_name = "scripted") {
    Backend b;
    b.impl_ = std::make_shared<Impl>();
    b.impl_->scripted = std::make_unique<ScriptedBackend>();
    b.impl_->scripted->queue.assign(responses.begin(), responses.end());
    b.impl_->scripted->model_name = std::move(model_name);
    return b;
  }

  static Backend scripted_rules(std::vector<ScriptRule> rules,
                                std::string model_name = "scripted") {
    Backend b;
    b.impl_ = std::make_shared<Impl>();
    b.impl_->scripted = std::make_unique<ScriptedBackend>();
    b.impl_->scripted->rules = std::move(rules);
    b.impl_->scripted->model_name = std::move(model_name);
    return b;
  }

  /// Loads a scripted backend from its JSON file form:
  ///   {"queue": ["...", ...], "rules": [{"trigger": "...", "content": "..."}]}
  static Backend scripted_from_file(const fs::path& path, std::string model_name) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Config, "cannot open script file " + path.string());
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Parse, "script file " + path.string() + ": " + e.what());
    }
    Backend b;
    b.impl_ = std::make_shared<Impl>();
    b.impl_->scripted = std::make_unique<ScriptedBackend>();
    b.impl_->scripted->model_name = std::move(model_name);
    for (const auto& entry : j.value("queue", json::array())) {
      b.impl_->scripted->queue.push_back(entry.get<std::string>());
    }
    for (const auto& entry : j.value("rules", json::array())) {
      b.impl_->scripted->rules.push_back(
          {entry.at("trigger").get<std::string>(), entry.at("content").get<std::string>()});
    }
    return b;
  }

  static Backend replay(const fs::path& fixture_path, std::string model_name) {
    std::ifstream in(fixture_path);
    if (!in) throw Error(ErrorKind::Config, "cannot open fixture " + fixture_path.string());
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Parse, "fixture " + fixture_path.string() + ": " + e.what());
    }
    Backend b;
    b.impl_ = std::make_shared<Impl>();
    auto replay = std::make_unique<ReplayBackend>();
    replay->model_name = std::move(model_name);
    replay->fixture_path = fixture_path.string();
    for (auto it = j.begin(); it != j.end(); ++it) {
      ReplayEntry entry;
      entry.content = it.value().at("content").get<std::string>();
      entry.prompt_tokens = it.value().value("prompt_tokens", std::int64_t{0});
      entry.completion_tokens = it.value().value("completion_tokens", std::int64_t{0});
      replay->entries.emplace(it.key(), std::move(entry));
    }
    b.impl_->replay = std::move(replay);
    return b;
  }

  CompletionResponse complete(const CompletionRequest& req) const {
    if (req.messages.empty()) {
      throw Error(ErrorKind::Validation, "completion request has no messages");
    }
    CompletionResponse resp;
    if (impl_->http) {
      resp = detail_gw::complete_http(*impl_->http, req);
    } else if (impl_->scripted) {
      resp = detail_gw::complete_scripted(*impl_->scripted, req);
    } else {
      resp = detail_gw::complete_replay(*impl_->replay, req);
    }
    if (impl_->recorder && !resp.from_cache) {
      impl_->recorder->record(request_digest(req, model_name()), resp);
    }
    return resp;
  }

  const std::string& model_name() const {
    if (impl_->http) return impl_->http->endpoint.model_name;
    if (impl_->scripted) return impl_->scripted->model_name;
    return impl_->replay->model_name;
  }

  std::string kind() const {
    if (impl_->http) return "http";
    if (impl_->scripted) return "scripted";
    return "replay";
  }

  /// Stable description for manifests: kind plus endpoint URL or fixture path.
  std::string identity() const {
    if (impl_->http) return "http:" + impl_->http->endpoint.base_url;
    if (impl_->scripted) return "scripted:" + impl_->scripted->model_name;
    return "replay:" + impl_->replay->fixture_path;
  }

  void attach_recorder(std::shared_ptr<FixtureRecorder> recorder) {
    impl_->recorder = std::move(recorder);
  }

 private:
  struct Impl {
    std::unique_ptr<HttpBackend> http;
    std::unique_ptr<ScriptedBackend> scripted;
    std::unique_ptr<ReplayBackend> replay;
    std::shared_ptr<FixtureRecorder> recorder;
  };

  std::shared_ptr<Impl> impl_;
};

inline CompletionResponse complete(const Backend& backend, const CompletionRequest& req) {
  return backend.complete(req);
}

inline void cache_put(const ResponseCache& cache, const std::string& digest,
                      const CompletionResponse& resp) {
  cache.put(digest, resp);
}

inline std::optional<CompletionResponse> cache_get(const ResponseCache& cache,
                                                   const std::string& digest) {
  return cache.get(digest);
}

}  // namespace furrow::llm
