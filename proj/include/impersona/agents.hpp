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

// The text-generator abstraction every task talks to, plus the synthetic
// agents used for offline verification.
//
// An Agent answers two kinds of query:
//   * generate: a sampled continuation of a prompt;
//   * candidate_logprobs: next-token log-probabilities restricted to a set of
//     single-token candidates (arm numbers, option letters).
// HTTP adapters live in http_agent.hpp and the record/replay layer in
// replay.hpp; both implement this same interface.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "impersona/errors.hpp"
#include "impersona/game.hpp"
#include "impersona/hash.hpp"
#include "impersona/rng.hpp"
#include "impersona/stats.hpp"
#include "impersona/text.hpp"

namespace impersona {

struct GenerationParams {
  double temperature = 0.7;
  std::optional<int> top_k = 50;
  int max_tokens = 96;
  std::vector<std::string> stop_sequences;
  std::optional<std::uint64_t> seed;  // distinguishes repeated samples

  bool operator==(const GenerationParams&) const = default;

  // Defaults for free-text descriptions.
  static GenerationParams free_text() { return {}; }
  // Defaults for answers that are a single symbol.
  static GenerationParams single_token() { return {1.0, std::nullopt, 1, {}, std::nullopt}; }

  void validate() const {
    if (!(temperature >= 0)) throw InputError("temperature must be >= 0");
    if (top_k && *top_k <= 0) throw InputError("top_k must be positive");
    if (max_tokens <= 0) throw InputError("max_tokens must be positive");
  }
};

inline void to_json(nlohmann::json& j, const GenerationParams& p) {
  j = nlohmann::json{{"temperature", p.temperature},
                     {"max_tokens", p.max_tokens},
                     {"stop", p.stop_sequences}};
  j["top_k"] = p.top_k ? nlohmann::json(*p.top_k) : nlohmann::json(nullptr);
  j["seed"] = p.seed ? nlohmann::json(*p.seed) : nlohmann::json(nullptr);
}

inline void from_json(const nlohmann::json& j, GenerationParams& p) {
  p.temperature = j.at("temperature").get<double>();
  p.max_tokens = j.at("max_tokens").get<int>();
  p.stop_sequences = j.value("stop", std::vector<std::string>{});
  p.top_k = j.contains("top_k") && !j["top_k"].is_null() ? std::optional<int>(j["top_k"].get<int>())
                                                         : std::nullopt;
  p.seed = j.contains("seed") && !j["seed"].is_null()
               ? std::optional<std::uint64_t>(j["seed"].get<std::uint64_t>())
               : std::nullopt;
}

inline std::vector<double> log_softmax(std::span<const double> logits) {
  if (logits.empty()) return {};
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out;
  out.reserve(logits.size());
  for (double l : logits) out.push_back(l - lse);
  return out;
}

// Scores for an ordered candidate list. Raw logits are allowed while
// `normalized` is false; normalized() converts to log-softmax over the
// candidates only.
struct CandidateLogProbs {
  std::vector<std::string> candidates;
  std::vector<double> values;
  bool normalized = false;

  bool operator==(const CandidateLogProbs&) const = default;

  std::size_t size() const { return candidates.size(); }

  double at(std::string_view candidate) const {
    for (std::size_t i = 0; i < candidates.size(); ++i)
      if (candidates[i] == candidate) return values[i];
    throw LookupError("candidate '" + std::string(candidate) + "' not scored");
  }

  CandidateLogProbs to_normalized() const {
    return {candidates, log_softmax(values), true};
  }

  // First maximal entry wins ties.
  std::size_t argmax() const {
    if (values.empty()) throw InputError("argmax of empty candidate set");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
      if (values[i] > values[best]) best = i;
    return best;
  }
};

inline void to_json(nlohmann::json& j, const CandidateLogProbs& c) {
  j = nlohmann::json{{"candidates", c.candidates}, {"values", c.values}, {"normalized", c.normalized}};
}

inline void from_json(const nlohmann::json& j, CandidateLogProbs& c) {
  c.candidates = j.at("candidates").get<std::vector<std::string>>();
  c.values = j.at("values").get<std::vector<double>>();
  c.normalized = j.at("normalized").get<bool>();
}

inline void validate_candidates(std::span<const std::string> candidates) {
  if (candidates.empty()) throw InputError("candidate list is empty");
  std::unordered_set<std::string_view> seen;
  for (const auto& c : candidates) {
    if (c.empty()) throw TokenizationError("empty candidate token");
    if (!seen.insert(c).second) throw InputError("duplicate candidate '" + c + "'");
  }
}

inline void require_prompt(std::string_view prompt) {
  if (prompt.empty()) throw InputError("prompt is empty");
}

class Agent {
 public:
  virtual ~Agent() = default;

  // Stable identifier of the backend (part of every replay-cache key).
  virtual std::string backend_id() const = 0;
  virtual std::string generate(std::string_view prompt, const GenerationParams& params) = 0;
  virtual CandidateLogProbs candidate_logprobs(std::string_view prompt,
                                               std::span<const std::string> candidates) = 0;
  virtual std::unique_ptr<Agent> clone() const = 0;
  // Upper bound on concurrent requests this agent should receive.
  virtual std::size_t max_in_flight() const { return 1; }
};

// Applies stop sequences and the token cap to locally produced text. Tokens
// are whitespace-delimited words; backends apply their own tokenizer.
inline std::string apply_generation_limits(std::string_view text, const GenerationParams& params) {
  std::size_t cut = text.size();
  for (const auto& stop : params.stop_sequences) {
    if (stop.empty()) continue;
    cut = std::min(cut, text.find(stop));
  }
  text = text.substr(0, cut);
  int tokens = 0;
  std::size_t i = 0, last_end = 0;
  while (i < text.size()) {
    while (i < text.size() && text::is_space(text[i])) ++i;
    if (i == text.size()) break;
    if (tokens == params.max_tokens) return std::string(text.substr(0, last_end));
    while (i < text.size() && !text::is_space(text[i])) ++i;
    last_end = i;
    ++tokens;
  }
  return std::string(text);
}

inline int count_tokens(std::string_view text) {
  int n = 0;
  bool in_word = false;
  for (char c : text) {
    if (text::is_space(c)) in_word = false;
    else if (!in_word) {
      in_word = true;
      ++n;
    }
  }
  return n;
}

// ---------------------------------------------------------------------------
// Chat-style option extraction with retries

struct ChatOutcome {
  std::optional<std::string> option;  // empty when every attempt failed
  int attempts = 0;
};

// Reads the first emitted symbol of a chat reply, e.g. " C." or "(B)" -> C.
inline std::optional<std::string> parse_first_option(std::string_view reply,
                                                     std::span<const std::string> options) {
  std::string_view s = text::trim(reply);
  while (!s.empty() && (s.front() == '(' || s.front() == '[' || s.front() == '"' || s.front() == '\''))
    s.remove_prefix(1);
  std::size_t end = 0;
  while (end < s.size() && !text::is_space(s[end])) ++end;
  std::string_view token = s.substr(0, end);
  while (!token.empty() && std::string_view(".,:;)]\"'").find(token.back()) != std::string_view::npos)
    token.remove_suffix(1);
  for (const auto& o : options)
    if (token == o) return o;
  return std::nullopt;
}

// Re-asks until the reply starts with one of `options`, at most `max_retries`
// times. A parse failure consumes an attempt; transport errors propagate.
inline ChatOutcome chat_first_option(Agent& agent, std::string_view prompt,
                                     std::span<const std::string> options, int max_retries = 10,
                                     GenerationParams params = {1.0, std::nullopt, 5, {}, {}}) {
  if (max_retries < 1) throw InputError("max_retries must be >= 1");
  validate_candidates(options);
  ChatOutcome out;
  for (int attempt = 0; attempt < max_retries; ++attempt) {
    params.seed = static_cast<std::uint64_t>(attempt);
    ++out.attempts;
    if (auto opt = parse_first_option(agent.generate(prompt, params), options)) {
      out.option = std::move(opt);
      return out;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic agents

namespace detail {
inline int arm_of(const std::string& candidate) {
  if (candidate == "1") return 1;
  if (candidate == "2") return 2;
  throw InputError("bandit agents only score the candidates \"1\" and \"2\"");
}

inline stats::PosteriorState track_beliefs(std::string_view prompt, double prior_mean,
                                           double prior_variance, double reward_variance) {
  stats::PosteriorState s{{prior_mean, prior_mean}, {prior_variance, prior_variance}};
  for (const auto& pull : parse_history(prompt))
    s = stats::kalman_update(s, pull.action, pull.reward, reward_variance);
  return s;
}
}  // namespace detail

// Uniformly random preferences: i.i.d. logits per (seed, prompt), so every
// candidate is equally likely to be the argmax. Stateless, hence safe to share
// across threads.
class RandomAgent final : public Agent {
 public:
  explicit RandomAgent(std::uint64_t seed = 0) : seed_(seed) {}

  std::string backend_id() const override { return "synthetic:random:" + std::to_string(seed_); }

  std::string generate(std::string_view prompt, const GenerationParams& params) override {
    require_prompt(prompt);
    static const std::vector<std::string> vocab = {
        "A", "B", "C", "D", "It", "is", "a", "small", "bird", "with", "red", "wings", "and",
        "the", "answer", "maybe", "car", "fast", "blue", "option", "I", "think", "."};
    params.validate();
    auto rng = derive_stream(seed_, sha256_u64(std::string(prompt) + '\0' +
                                               nlohmann::json(params).dump()),
                             "generate");
    std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1);
    std::uniform_int_distribution<int> len(1, 12);
    std::string out;
    for (int i = 0, n = len(rng); i < n; ++i) {
      if (i) out += ' ';
      out += vocab[pick(rng)];
    }
    return apply_generation_limits(out, params);
  }

  CandidateLogProbs candidate_logprobs(std::string_view prompt,
                                       std::span<const std::string> candidates) override {
    validate_candidates(candidates);
    auto rng = derive_stream(seed_, sha256_u64(prompt), "logprobs");
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<double> logits;
    for (std::size_t i = 0; i < candidates.size(); ++i) logits.push_back(noise(rng));
    return CandidateLogProbs{{candidates.begin(), candidates.end()}, std::move(logits), false}
        .to_normalized();
  }

  std::unique_ptr<Agent> clone() const override { return std::make_unique<RandomAgent>(*this); }
  std::size_t max_in_flight() const override { return 64; }

 private:
  std::uint64_t seed_;
};

// Belief-model parameters the synthetic bandit agents assume.
struct BeliefModel {
  double prior_mean = 0.0;
  double prior_variance = 10.0;
  double reward_variance = 1.0;
};

// Puts logit mass `delta` on the arm with the higher posterior mean (ties go
// to arm 1). delta -> infinity is a purely greedy player.
class GreedyBanditAgent final : public Agent {
 public:
  explicit GreedyBanditAgent(double delta = 3.0, BeliefModel beliefs = {})
      : delta_(delta), beliefs_(beliefs) {}

  std::string backend_id() const override {
    return "synthetic:greedy:" + text::format_fixed(delta_, 6);
  }

  std::string generate(std::string_view prompt, const GenerationParams& params) override {
    require_prompt(prompt);
    return apply_generation_limits(std::to_string(preferred_arm(prompt)), params);
  }

  CandidateLogProbs candidate_logprobs(std::string_view prompt,
                                       std::span<const std::string> candidates) override {
    validate_candidates(candidates);
    const int best = preferred_arm(prompt);
    // An infinite delta is the purely greedy limit; a 1000-nat gap already
    // rounds the other arm's probability to exactly zero.
    const double mass = std::isinf(delta_) ? 1000.0 : delta_;
    std::vector<double> logits;
    for (const auto& c : candidates) logits.push_back(detail::arm_of(c) == best ? mass : 0.0);
    return CandidateLogProbs{{candidates.begin(), candidates.end()}, std::move(logits), false}
        .to_normalized();
  }

  std::unique_ptr<Agent> clone() const override {
    return std::make_unique<GreedyBanditAgent>(*this);
  }
  std::size_t max_in_flight() const override { return 64; }

  int preferred_arm(std::string_view prompt) const {
    auto s = detail::track_beliefs(prompt, beliefs_.prior_mean, beliefs_.prior_variance,
                                   beliefs_.reward_variance);
    return s.mean[1] > s.mean[0] ? 2 : 1;
  }

 private:
  double delta_;
  BeliefModel beliefs_;
};

// Directed explorer: logit_a = scale * (mu_a + gamma * sigma_a).
class UncertaintyAgent final : public Agent {
 public:
  explicit UncertaintyAgent(double gamma = 1.0, double scale = 1.0, BeliefModel beliefs = {})
      : gamma_(gamma), scale_(scale), beliefs_(beliefs) {}

  std::string backend_id() const override {
    return "synthetic:uncertainty:" + text::format_fixed(gamma_, 6) + ":" +
           text::format_fixed(scale_, 6);
  }

  std::string generate(std::string_view prompt, const GenerationParams& params) override {
    require_prompt(prompt);
    auto lp = candidate_logprobs(prompt, std::vector<std::string>{"1", "2"});
    return apply_generation_limits(lp.candidates[lp.argmax()], params);
  }

  CandidateLogProbs candidate_logprobs(std::string_view prompt,
                                       std::span<const std::string> candidates) override {
    validate_candidates(candidates);
    auto s = detail::track_beliefs(prompt, beliefs_.prior_mean, beliefs_.prior_variance,
                                   beliefs_.reward_variance);
    std::vector<double> logits;
    for (const auto& c : candidates) {
      const int a = detail::arm_of(c);
      logits.push_back(scale_ * (s.mean[a - 1] + gamma_ * s.sd(a)));
    }
    return CandidateLogProbs{{candidates.begin(), candidates.end()}, std::move(logits), false}
        .to_normalized();
  }

  std::unique_ptr<Agent> clone() const override {
    return std::make_unique<UncertaintyAgent>(*this);
  }
  std::size_t max_in_flight() const override { return 64; }

 private:
  double gamma_;
  double scale_;
  BeliefModel beliefs_;
};

// Plays back scripted behaviour. Generation and scoring are driven by
// callables that receive the prompt and a per-kind call index, so fixed
// replies, transcripts and prompt-dependent rules share one type.
class ScriptedAgent final : public Agent {
 public:
  using GenerateFn = std::function<std::string(std::string_view prompt, std::size_t call)>;
  // Returns the preferred candidate; an empty string means "no preference".
  using AnswerFn = std::function<std::string(std::string_view prompt, std::size_t call)>;

  static constexpr double kMargin = 1000.0;

  ScriptedAgent(GenerateFn gen, AnswerFn answer, std::string id = "synthetic:scripted")
      : gen_(std::move(gen)), answer_(std::move(answer)), id_(std::move(id)),
        state_(std::make_shared<State>()) {}

  static ScriptedAgent echo(std::string text) {
    return {[t = std::move(text)](std::string_view, std::size_t) { return t; }, nullptr};
  }

  static ScriptedAgent transcript(std::vector<std::string> replies) {
    return {[r = std::move(replies)](std::string_view, std::size_t call) {
              if (call >= r.size()) throw FixtureError("scripted transcript exhausted");
              return r[call];
            },
            nullptr};
  }

  static ScriptedAgent fixed_answer(std::string candidate) {
    return {[c = candidate](std::string_view, std::size_t) { return c; },
            [c = candidate](std::string_view, std::size_t) { return c; }};
  }

  static ScriptedAgent uniform() {
    return {nullptr, [](std::string_view, std::size_t) { return std::string(); }};
  }

  static ScriptedAgent answer_transcript(std::vector<std::string> answers) {
    return {nullptr, [a = std::move(answers)](std::string_view, std::size_t call) {
              if (call >= a.size()) throw FixtureError("scripted answers exhausted");
              return a[call];
            }};
  }

  static ScriptedAgent answer_by(std::function<std::string(std::string_view)> rule) {
    auto shared = std::make_shared<std::function<std::string(std::string_view)>>(std::move(rule));
    return {[shared](std::string_view p, std::size_t) { return (*shared)(p); },
            [shared](std::string_view p, std::size_t) { return (*shared)(p); }};
  }

  std::string backend_id() const override { return id_; }

  std::string generate(std::string_view prompt, const GenerationParams& params) override {
    require_prompt(prompt);
    if (!gen_) throw FixtureError("scripted agent has no generation script");
    std::size_t call;
    {
      std::lock_guard lock(state_->mu);
      call = state_->generate_calls++;
    }
    return apply_generation_limits(gen_(prompt, call), params);
  }

  CandidateLogProbs candidate_logprobs(std::string_view prompt,
                                       std::span<const std::string> candidates) override {
    validate_candidates(candidates);
    if (!answer_) throw FixtureError("scripted agent has no answer script");
    std::size_t call;
    {
      std::lock_guard lock(state_->mu);
      call = state_->answer_calls++;
    }
    const std::string preferred = answer_(prompt, call);
    std::vector<double> logits;
    for (const auto& c : candidates)
      logits.push_back(preferred.empty() || c == preferred ? 0.0 : -kMargin);
    return CandidateLogProbs{{candidates.begin(), candidates.end()}, std::move(logits), false}
        .to_normalized();
  }

  // Clones share the call counters, so a transcript is consumed once overall.
  std::unique_ptr<Agent> clone() const override { return std::make_unique<ScriptedAgent>(*this); }

  std::size_t generate_calls() const {
    std::lock_guard lock(state_->mu);
    return state_->generate_calls;
  }

 private:
  struct State {
    std::mutex mu;
    std::size_t generate_calls = 0;
    std::size_t answer_calls = 0;
  };
  GenerateFn gen_;
  AnswerFn answer_;
  std::string id_;
  std::shared_ptr<State> state_;
};

}  // namespace impersona
