#pragma once

// Real network transport for HttpBackend, built on cpp-httplib. Kept out of
// gateway.hpp so test and library consumers do not pull in the HTTP stack.
// Define FURROW_WITH_TLS (and link OpenSSL) for https endpoints.

#ifdef FURROW_WITH_TLS
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include <chrono>
#include <cmath>
#include <string>

#include "furrow/errors.hpp"
#include "furrow/gateway.hpp"

namespace furrow::llm {

/// Splits "scheme://host[:port]/prefix" into client origin and path prefix.
inline std::pair<std::string, std::string> split_base_url(const std::string& base_url) {
  auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorKind::Config, "base_url must include a scheme: " + base_url);
  }
  auto path_start = base_url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {base_url, ""};
  return {base_url.substr(0, path_start), base_url.substr(path_start)};
}

inline Transport make_httplib_transport() {
  return [](const std::string& url, const std::string& body, const std::string& auth_token,
            double timeout_s) -> HttpResult {
    auto [origin, path] = split_base_url(url);
#ifndef FURROW_WITH_TLS
    if (origin.rfind("https://", 0) == 0) {
      return {0, "", true, "built without TLS support; https endpoint unreachable"};
    }
#endif
    httplib::Client client(origin);
    auto timeout = std::chrono::milliseconds(static_cast<int>(std::lround(timeout_s * 1000)));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    if (!auth_token.empty()) headers.emplace("Authorization", "Bearer " + auth_token);
    auto result = client.Post(path, headers, body, "application/json");
    if (!result) {
      return {0, "", true, httplib::to_string(result.error())};
    }
    return {result->status, result->body, false, ""};
  };
}

inline Backend make_http_backend(const ModelEndpoint& endpoint,
                                 std::shared_ptr<ResponseCache> cache = nullptr) {
  HttpBackend backend;
  backend.endpoint = endpoint;
  backend.transport = make_httplib_transport();
  backend.cache = std::move(cache);
  return Backend::http(std::move(backend));
}

}  // namespace furrow::llm
