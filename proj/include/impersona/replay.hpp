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

// Record/replay fixture cache in front of any Agent.
//
// Fixture files are JSON Lines, one record per backend response:
//   {"schema":1,"key":<sha256>,"backend":..,"kind":"generate"|"logprobs",
//    "prompt_sha256":..,"prompt":..,"params"|"candidates":..,"occurrence":n,
//    "response":..}
// Log-probability queries are deterministic functions of the prompt and are
// keyed without an occurrence index. Generations are sampled, so the n-th
// identical request gets its own key; repeated identical requests must
// therefore be issued in a deterministic order to replay faithfully.

#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "impersona/agents.hpp"
#include "impersona/hash.hpp"
#include "impersona/jsonl.hpp"

namespace impersona {

enum class BackendMode { live, record, replay, replay_strict };

inline std::string_view to_string(BackendMode m) {
  switch (m) {
    case BackendMode::live: return "live";
    case BackendMode::record: return "record";
    case BackendMode::replay: return "replay";
    case BackendMode::replay_strict: return "replay-strict";
  }
  return "live";
}

inline BackendMode parse_backend_mode(std::string_view s) {
  for (auto m : {BackendMode::live, BackendMode::record, BackendMode::replay,
                 BackendMode::replay_strict})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown mode '" + std::string(s) + "'");
}

inline constexpr int kFixtureSchema = 1;

class ReplayCache {
 public:
  // Loads `path` if it exists. Appends go to the same file when writable.
  explicit ReplayCache(std::filesystem::path path, bool writable = true)
      : path_(std::move(path)) {
    if (std::filesystem::exists(path_)) {
      auto r = jsonl::read_all(path_);
      if (r.truncated_at) throw TruncatedWriteError(path_.string(), *r.truncated_at);
      for (auto& rec : r.records) {
        if (rec.value("schema", 0) != kFixtureSchema)
          throw MigrationError(path_.string() + ": unsupported fixture schema");
        std::string key = rec.at("key").get<std::string>();
        entries_[std::move(key)] = std::move(rec);
      }
    }
    if (writable) appender_ = std::make_unique<jsonl::Appender>(path_);
  }

  std::optional<nlohmann::json> find(const std::string& key) const {
    std::shared_lock lock(mu_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return std::optional<nlohmann::json>(std::in_place, it->second);
  }

  void put(nlohmann::json record) {
    if (!appender_) throw FixtureError("fixture cache '" + path_.string() + "' is read-only");
    std::unique_lock lock(mu_);
    const std::string key = record.at("key").get<std::string>();
    appender_->append(record);
    entries_[key] = std::move(record);
  }

  std::size_t size() const {
    std::shared_lock lock(mu_);
    return entries_.size();
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, nlohmann::json> entries_;
  std::unique_ptr<jsonl::Appender> appender_;
};

// Wraps a live agent with the fixture cache according to `mode`:
//   live           pass-through, cache untouched;
//   record         call the live agent and append every response;
//   replay         serve hits from the cache, fall back to live on a miss;
//   replay-strict  serve hits only; a miss is a FixtureError.
class CachingAgent final : public Agent {
 public:
  CachingAgent(std::unique_ptr<Agent> inner, std::shared_ptr<ReplayCache> cache, BackendMode mode)
      : inner_(std::move(inner)), cache_(std::move(cache)), mode_(mode),
        counters_(std::make_shared<Counters>()) {
    if (!inner_) throw ConfigError("CachingAgent needs an inner agent");
    if (!cache_ && mode_ != BackendMode::live) throw ConfigError("mode requires a fixture cache");
  }

  std::string backend_id() const override { return inner_->backend_id(); }
  BackendMode mode() const { return mode_; }

  std::string generate(std::string_view prompt, const GenerationParams& params) override {
    require_prompt(prompt);
    if (mode_ == BackendMode::live) return inner_->generate(prompt, params);
    const nlohmann::json pj = params;
    const std::string base = sha256_hex(
        nlohmann::json{{"backend", backend_id()}, {"kind", "generate"}, {"prompt", prompt}, {"params", pj}}
            .dump());
    std::uint64_t occurrence;
    {
      std::lock_guard lock(counters_->mu);
      occurrence = counters_->seen[base]++;
    }
    const std::string key = sha256_hex(base + ":" + std::to_string(occurrence));
    if (mode_ != BackendMode::record)
      if (auto hit = cache_->find(key)) return hit->at("response").get<std::string>();
    if (mode_ == BackendMode::replay_strict) throw miss(prompt, "generate");
    std::string response = inner_->generate(prompt, params);
    if (mode_ == BackendMode::record)
      cache_->put(record(key, "generate", prompt, occurrence, {"params", pj}, response));
    return response;
  }

  CandidateLogProbs candidate_logprobs(std::string_view prompt,
                                       std::span<const std::string> candidates) override {
    if (mode_ == BackendMode::live) return inner_->candidate_logprobs(prompt, candidates);
    const nlohmann::json cj = std::vector<std::string>(candidates.begin(), candidates.end());
    const std::string key = sha256_hex(
        nlohmann::json{{"backend", backend_id()}, {"kind", "logprobs"}, {"prompt", prompt}, {"candidates", cj}}
            .dump());
    // Scores are deterministic, so a recorded answer is reused even while
    // recording.
    if (auto hit = cache_->find(key)) return hit->at("response").get<CandidateLogProbs>();
    if (mode_ == BackendMode::replay_strict) throw miss(prompt, "logprobs");
    CandidateLogProbs response = inner_->candidate_logprobs(prompt, candidates);
    if (mode_ == BackendMode::record)
      cache_->put(record(key, "logprobs", prompt, 0, {"candidates", cj}, response));
    return response;
  }

  // Clones share the cache and the occurrence counters.
  std::unique_ptr<Agent> clone() const override {
    auto c = std::make_unique<CachingAgent>(inner_->clone(), cache_, mode_);
    c->counters_ = counters_;
    return c;
  }

  std::size_t max_in_flight() const override { return inner_->max_in_flight(); }

 private:
  struct Counters {
    std::mutex mu;
    std::map<std::string, std::uint64_t> seen;
  };

  nlohmann::json record(const std::string& key, const char* kind, std::string_view prompt,
                        std::uint64_t occurrence, std::pair<const char*, nlohmann::json> request,
                        nlohmann::json response) const {
    nlohmann::json r{{"schema", kFixtureSchema},
                     {"key", key},
                     {"backend", backend_id()},
                     {"kind", kind},
                     {"prompt_sha256", sha256_hex(prompt)},
                     {"prompt", prompt},
                     {"occurrence", occurrence},
                     {"response", std::move(response)}};
    r[request.first] = std::move(request.second);
    return r;
  }

  FixtureError miss(std::string_view prompt, const char* kind) const {
    return FixtureError(std::string("no recorded ") + kind + " response for prompt " +
                        sha256_hex(prompt).substr(0, 16) + " in '" + cache_->path().string() + "'");
  }

  std::unique_ptr<Agent> inner_;
  std::shared_ptr<ReplayCache> cache_;
  BackendMode mode_;
  std::shared_ptr<Counters> counters_;
};

}  // namespace impersona
