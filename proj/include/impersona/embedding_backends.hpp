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

// Embedding providers that talk to a server, and their record/replay wrapper.

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "impersona/vision.hpp"
#include "impersona/hash.hpp"
#include "impersona/replay.hpp"
#include "impersona/http_agent.hpp"

namespace impersona::vision {

// POST {base_url}/embeddings with {"model", "input": [texts]}; reads
// data[i].embedding, ordered by data[i].index when present.
class HttpEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit HttpEmbeddingProvider(HttpBackendConfig cfg) : endpoint_(std::move(cfg)) {}

  std::string provider_id() const override {
    return "http:" + endpoint_.config().base_url + ":" + endpoint_.config().model;
  }

  std::vector<EmbeddingVector> embed(std::span<const EmbeddingRequest> requests) override {
    if (requests.empty()) return {};
    nlohmann::json input = nlohmann::json::array();
    for (const auto& r : requests) input.push_back(r.text);
    const auto res = endpoint_.post("/embeddings", {{"model", endpoint_.config().model}, {"input", input}});
    std::vector<EmbeddingVector> out(requests.size());
    std::vector<bool> seen(requests.size(), false);
    try {
      const auto& data = res.at("data");
      if (data.size() != requests.size()) throw TransportError("embedding response has the wrong length");
      for (std::size_t i = 0; i < data.size(); ++i) {
        const auto idx = data[i].contains("index") ? data[i].at("index").get<std::size_t>() : i;
        if (idx >= out.size() || seen[idx]) throw TransportError("embedding response has a bad index");
        seen[idx] = true;
        out[idx].values = data[i].at("embedding").get<std::vector<double>>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw TransportError(std::string("malformed embedding response: ") + e.what());
    }
    return out;
  }

 private:
  HttpEndpoint endpoint_;
};

// Record/replay for embedding calls, keyed by SHA-256 of (provider, text).
class CachingEmbeddingProvider final : public EmbeddingProvider {
 public:
  CachingEmbeddingProvider(std::unique_ptr<EmbeddingProvider> inner, std::shared_ptr<ReplayCache> cache,
                           BackendMode mode)
      : inner_(std::move(inner)), cache_(std::move(cache)), mode_(mode) {
    if (!inner_) throw ConfigError("CachingEmbeddingProvider needs an inner provider");
    if (!cache_ && mode_ != BackendMode::live) throw ConfigError("mode requires a fixture cache");
  }

  std::string provider_id() const override { return inner_->provider_id(); }

  std::vector<EmbeddingVector> embed(std::span<const EmbeddingRequest> requests) override {
    if (mode_ == BackendMode::live) return inner_->embed(requests);
    std::vector<EmbeddingVector> out(requests.size());
    std::vector<std::size_t> missing;
    std::vector<std::string> keys;
    for (std::size_t i = 0; i < requests.size(); ++i) {
      keys.push_back(sha256_hex(
          nlohmann::json{{"backend", provider_id()}, {"kind", "embed"}, {"text", requests[i].text}}.dump()));
      if (auto hit = cache_->find(keys.back()))
        out[i].values = hit->at("response").get<std::vector<double>>();
      else
        missing.push_back(i);
    }
    if (missing.empty()) return out;
    if (mode_ == BackendMode::replay_strict)
      throw FixtureError("no recorded embedding for '" + requests[missing[0]].key + "' in '" +
                         cache_->path().string() + "'");
    std::vector<EmbeddingRequest> ask;
    for (auto i : missing) ask.push_back(requests[i]);
    auto fresh = inner_->embed(ask);
    if (fresh.size() != ask.size()) throw TransportError("embedding provider returned the wrong count");
    for (std::size_t k = 0; k < missing.size(); ++k) {
      const auto i = missing[k];
      out[i] = std::move(fresh[k]);
      if (mode_ == BackendMode::record)
        cache_->put({{"schema", kFixtureSchema},
                     {"key", keys[i]},
                     {"backend", provider_id()},
                     {"kind", "embed"},
                     {"text", requests[i].text},
                     {"response", out[i].values}});
    }
    return out;
  }

 private:
  std::unique_ptr<EmbeddingProvider> inner_;
  std::shared_ptr<ReplayCache> cache_;
  BackendMode mode_;
};

}  // namespace impersona::vision
