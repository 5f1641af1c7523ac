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

// Two-armed Gaussian bandit played through prompt chaining.
//
// Each game draws hidden arm means from Normal(prior_mean, prior_variance).
// On every trial the agent sees the persona clause, the task instruction and
// the list of previous pulls, scores the candidates "1" and "2", and the
// action is sampled from the softmax of those two scores (no temperature).
// Rewards are drawn from Normal(arm mean, reward_variance).

#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "impersona/agents.hpp"
#include "impersona/game.hpp"
#include "impersona/parallel.hpp"
#include "impersona/persona.hpp"
#include "impersona/rng.hpp"

namespace impersona::bandit {

inline constexpr std::string_view kIntro =
    "You are going to a casino that owns two slot machines. You earn money each time you play "
    "on one of these machines.";
inline constexpr std::string_view kAnswerCue = "A: You choose machine";

inline const std::vector<std::string>& arm_candidates() {
  static const std::vector<std::string> c = {"1", "2"};
  return c;
}

inline GameRecord new_game(const BanditConfig& cfg, std::int64_t game_id,
                           std::string persona_id = {}, std::string template_id = {}) {
  cfg.validate();
  GameRecord g;
  g.game_id = game_id;
  g.persona_id = std::move(persona_id);
  g.template_id = std::move(template_id);
  auto rng = derive_stream(cfg.master_seed, static_cast<std::uint64_t>(game_id), "arm_means");
  std::normal_distribution<double> prior(cfg.prior_mean, std::sqrt(cfg.prior_variance));
  for (int a = 0; a < cfg.n_arms; ++a) g.arm_means.push_back(prior(rng));
  return g;
}

// Layout (one line each, '\n' separated):
//   <persona clause>.
//   <intro>
//   Machine <a> delivered <r> dollars.      (one per past trial)
//   Your goal is ... A: You choose machine
inline std::string build_bandit_prompt(const Persona& persona, const PromptTemplate& tmpl,
                                       std::span<const TrialRecord> history, int n_trials = 10) {
  if (static_cast<int>(history.size()) >= n_trials)
    throw StateError("history already holds every trial");
  std::string p = render_prompt(tmpl, persona);
  p += ".\n";
  p += kIntro;
  p += '\n';
  for (const auto& t : history) {
    p += format_history_line(t.action, t.reward);
    p += '\n';
  }
  p += "Your goal is to maximize the sum of received dollars within " + std::to_string(n_trials) +
       " trials. Q: Which machine do you choose? You must answer with either 1 or 2. ";
  p += kAnswerCue;
  return p;
}

// Samples arm 1 or 2 with probability softmax(logprobs).
inline int sample_action(const std::array<double, 2>& logprobs, RngStream& rng) {
  if (!std::isfinite(logprobs[0]) || !std::isfinite(logprobs[1]))
    throw NumericError("arm log-probabilities must be finite");
  const double p1 = 1.0 / (1.0 + std::exp(logprobs[1] - logprobs[0]));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return u(rng) < p1 ? 1 : 2;
}

inline double step(GameRecord& game, const BanditConfig& cfg, int action, RngStream& rng,
                   std::array<double, 2> action_logprobs = {}) {
  if (action != 1 && action != 2) throw InputError("action must be 1 or 2");
  if (static_cast<int>(game.trials.size()) >= cfg.n_trials)
    throw StateError("game " + std::to_string(game.game_id) + " is already complete");
  std::normal_distribution<double> noise(game.arm_means.at(action - 1),
                                         std::sqrt(cfg.reward_variance));
  const double reward = noise(rng);
  game.trials.push_back({static_cast<int>(game.trials.size()) + 1, action, reward, action_logprobs});
  return reward;
}

// Plays one game to completion. Agent errors abort the game and are recorded
// in GameRecord::failure.
inline GameRecord play_game(const BanditConfig& cfg, std::int64_t game_id, const Persona& persona,
                            const PromptTemplate& tmpl, Agent& agent) {
  GameRecord game = new_game(cfg, game_id, persona.id, tmpl.id);
  auto actions = derive_stream(cfg.master_seed, static_cast<std::uint64_t>(game_id), "actions");
  auto rewards = derive_stream(cfg.master_seed, static_cast<std::uint64_t>(game_id), "rewards");
  try {
    for (int t = 0; t < cfg.n_trials; ++t) {
      const std::string prompt = build_bandit_prompt(persona, tmpl, game.trials, cfg.n_trials);
      const auto scores = agent.candidate_logprobs(prompt, arm_candidates()).to_normalized();
      const std::array<double, 2> lp = {scores.at("1"), scores.at("2")};
      step(game, cfg, sample_action(lp, actions), rewards, lp);
    }
  } catch (const Error& e) {
    game.failure = e.what();
  }
  return game;
}

struct RunGamesResult {
  std::vector<GameRecord> games;  // in game_id order, failed games included
  std::size_t n_failed = 0;
};

// Game ids run from `first_game_id`; each game's randomness depends only on
// (master_seed, game_id), so `parallelism` never changes the records.
inline RunGamesResult run_games(const BanditConfig& cfg, const Persona& persona,
                                const PromptTemplate& tmpl, const Agent& agent,
                                std::size_t parallelism = 1, std::int64_t first_game_id = 0) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(cfg.n_games);
  const std::size_t workers = std::min(parallelism, agent.max_in_flight());
  std::vector<std::unique_ptr<Agent>> clones;
  for (std::size_t w = 0; w < std::max<std::size_t>(workers, 1); ++w) clones.push_back(agent.clone());
  RunGamesResult out;
  out.games.resize(n);
  parallel_for(n, workers, [&](std::size_t i, std::size_t w) {
    out.games[i] = play_game(cfg, first_game_id + static_cast<std::int64_t>(i), persona, tmpl,
                             *clones[w]);
  });
  for (const auto& g : out.games)
    if (g.failure) ++out.n_failed;
  return out;
}

}  // namespace impersona::bandit
