// Copyright 2026 The Impersona Authors.
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

// HTTP adapters for chat-completions style backends.

#pragma once

#include <chrono>
#include <cstdlib>
#include <memory>
#include <regex>
#include <semaphore>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

// Eigen (via agents.hpp) must precede httplib: <resolv.h> defines a `_res`
// macro that collides with Eigen parameter names.
#include "impersona/agents.hpp"

#include <httplib.h>

namespace impersona {

struct HttpBackendConfig {
  std::string base_url = "http://localhost:8000/v1";  // scheme://host[:port][/prefix]
  std::string model;
  std::string api_key_env = "IMPERSONA_API_KEY";  // bearer token, read at request time
  std::size_t max_in_flight = 4;
  int transport_retries = 3;
  std::chrono::milliseconds initial_backoff{1000};  // doubles after each failure
  int top_logprobs = 20;
  std::chrono::seconds timeout{120};
};

// One JSON-over-HTTP endpoint with bounded concurrency and retry/backoff on
// connection failures, 429 and 5xx responses.
class HttpEndpoint {
 public:
  explicit HttpEndpoint(HttpBackendConfig cfg)
      : cfg_(std::move(cfg)),
        slots_(std::make_shared<std::counting_semaphore<1024>>(
            static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(cfg_.max_in_flight, 1, 1024)))) {
    static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(cfg_.base_url, m, url))
      throw ConfigError("invalid backend URL '" + cfg_.base_url + "'");
    origin_ = m[1].str();
    prefix_ = m[2].matched ? m[2].str() : "";
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }

  const HttpBackendConfig& config() const { return cfg_; }

  nlohmann::json post(const std::string& path, const nlohmann::json& body) const {
    struct Slot {
      std::counting_semaphore<1024>& s;
      explicit Slot(std::counting_semaphore<1024>& sem) : s(sem) { s.acquire(); }
      ~Slot() { s.release(); }
    } slot(*slots_);

    httplib::Client client(origin_);
    client.set_connection_timeout(cfg_.timeout);
    client.set_read_timeout(cfg_.timeout);
    httplib::Headers headers;
    if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);

    auto backoff = cfg_.initial_backoff;
    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.transport_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
      }
      auto res = client.Post(prefix_ + path, headers, body.dump(), "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200)
        throw TransportError("HTTP " + std::to_string(res->status) + " from " + origin_ +
                             prefix_ + path + ": " + res->body.substr(0, 200));
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& e) {
        throw TransportError(std::string("malformed JSON from backend: ") + e.what());
      }
    }
    throw TransportError("backend " + origin_ + " unreachable after " +
                         std::to_string(cfg_.transport_retries) + " retries: " + last_error);
  }

 private:
  HttpBackendConfig cfg_;
  std::string origin_;
  std::string prefix_;
  std::shared_ptr<std::counting_semaphore<1024>> slots_;
};

// Chat-completions adapter. Candidate scores come from the first generated
// position's top-logprobs list; a candidate missing from that list is scored
// (lowest returned logprob - 20).
class HttpChatAgent final : public Agent {
 public:
  static constexpr double kMissingPenalty = 20.0;

  explicit HttpChatAgent(HttpBackendConfig cfg) : endpoint_(std::make_shared<HttpEndpoint>(std::move(cfg))) {}

  std::string backend_id() const override {
    return "http:" + endpoint_->config().base_url + ":" + endpoint_->config().model;
  }

  std::string generate(std::string_view prompt, const GenerationParams& params) override {
    require_prompt(prompt);
    params.validate();
    nlohmann::json body = request(prompt);
    body["temperature"] = params.temperature;
    body["max_tokens"] = params.max_tokens;
    if (params.top_k) body["top_k"] = *params.top_k;
    if (!params.stop_sequences.empty()) body["stop"] = params.stop_sequences;
    if (params.seed) body["seed"] = *params.seed;
    const auto res = endpoint_->post("/chat/completions", body);
    try {
      return res.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw TransportError(std::string("unexpected completion payload: ") + e.what());
    }
  }

  CandidateLogProbs candidate_logprobs(std::string_view prompt,
                                       std::span<const std::string> candidates) override {
    validate_candidates(candidates);
    for (const auto& c : candidates)
      if (c.find_first_of(" \t\n\r") != std::string::npos)
        throw TokenizationError("candidate '" + c + "' is not a single token");
    const auto params = GenerationParams::single_token();
    nlohmann::json body = request(prompt);
    body["temperature"] = params.temperature;
    body["max_tokens"] = params.max_tokens;
    body["logprobs"] = true;
    body["top_logprobs"] = endpoint_->config().top_logprobs;
    const auto res = endpoint_->post("/chat/completions", body);

    std::vector<std::pair<std::string, double>> top;
    try {
      for (const auto& e : res.at("choices").at(0).at("logprobs").at("content").at(0).at("top_logprobs"))
        top.emplace_back(e.at("token").get<std::string>(), e.at("logprob").get<double>());
    } catch (const nlohmann::json::exception& e) {
      throw TransportError(std::string("backend returned no top logprobs: ") + e.what());
    }
    if (top.empty()) throw TransportError("backend returned an empty top-logprobs list");
    double lowest = top.front().second;
    for (const auto& [tok, lp] : top) lowest = std::min(lowest, lp);

    CandidateLogProbs out{{candidates.begin(), candidates.end()}, {}, false};
    for (const auto& c : candidates) {
      // Tokenizers often carry a leading space (" A"); match on trimmed text
      // and keep the best variant.
      double best = -std::numeric_limits<double>::infinity();
      for (const auto& [tok, lp] : top)
        if (text::trim(tok) == c) best = std::max(best, lp);
      out.values.push_back(std::isinf(best) ? lowest - kMissingPenalty : best);
    }
    return out;
  }

  std::unique_ptr<Agent> clone() const override { return std::make_unique<HttpChatAgent>(*this); }
  std::size_t max_in_flight() const override { return endpoint_->config().max_in_flight; }

 private:
  nlohmann::json request(std::string_view prompt) const {
    return {{"model", endpoint_->config().model},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", std::string(prompt)}}})}};
  }

  std::shared_ptr<HttpEndpoint> endpoint_;
};

}  // namespace impersona
