// Copyright 2026 The voximp Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Chat-completion client over HTTP(S). https endpoints need the including
// target to define CPPHTTPLIB_OPENSSL_SUPPORT and link OpenSSL.

#include <cstdlib>
#include <string>

#include "httplib.h"
#include "json.hpp"
#include "voximp/llm.hpp"

namespace voximp::llm {

struct Endpoint {
  std::string scheme_host_port;  // e.g. https://api.example.com:443
  std::string path;              // e.g. /v1/chat/completions
};

inline Endpoint split_endpoint(const std::string& url) {
  const std::size_t scheme = url.find("://");
  if (scheme == std::string::npos) fail(ErrorCode::kConfigError, "endpoint must start with http:// or https://");
  const std::string proto = url.substr(0, scheme);
  if (proto != "http" && proto != "https") fail(ErrorCode::kConfigError, "unsupported scheme '" + proto + "'");
  const std::size_t path = url.find('/', scheme + 3);
  if (path == std::string::npos) return {url, "/"};
  return {url.substr(0, path), url.substr(path)};
}

class HttpClient final : public LlmClient {
 public:
  explicit HttpClient(LlmClientConfig cfg) : cfg_(std::move(cfg)), ep_(split_endpoint(cfg_.endpoint)) {}

  std::string complete(const std::string& prompt) override {
    httplib::Client cli(ep_.scheme_host_port);
    const auto secs = static_cast<time_t>(cfg_.timeout_seconds);
    cli.set_connection_timeout(secs, 0);
    cli.set_read_timeout(secs, 0);
    cli.set_write_timeout(secs, 0);
    httplib::Headers headers;
    if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key != nullptr && *key != '\0') {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    const nlohmann::json body = {{"model", cfg_.model},
                                 {"temperature", cfg_.temperature},
                                 {"messages", {{{"role", "user"}, {"content", prompt}}}}};
    const auto res = cli.Post(ep_.path, headers, body.dump(), "application/json");
    if (!res) fail(ErrorCode::kIoError, "request to " + cfg_.endpoint + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200) {
      fail(ErrorCode::kIoError, cfg_.endpoint + " returned HTTP " + std::to_string(res->status));
    }
    const auto j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_discarded() || !j.contains("choices") || j["choices"].empty()) {
      fail(ErrorCode::kMalformedResponse, "unexpected chat-completion payload");
    }
    return j["choices"][0]["message"]["content"].get<std::string>();
  }
  bool uses_network() const override { return true; }

 private:
  LlmClientConfig cfg_;
  Endpoint ep_;
};

}  // namespace voximp::llm
