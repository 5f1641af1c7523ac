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

// Two-armed bandit configuration and game records, shared by the environment
// and the analysis code.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "impersona/errors.hpp"
#include "impersona/text.hpp"

namespace impersona {

// Normal(mean, variance) throughout: prior_variance and reward_variance are
// variances, not standard deviations.
struct BanditConfig {
  int n_arms = 2;
  int n_trials = 10;
  double prior_mean = 0.0;
  double prior_variance = 10.0;
  double reward_variance = 1.0;
  int n_games = 2000;
  std::uint64_t master_seed = 0;

  bool operator==(const BanditConfig&) const = default;

  void validate() const {
    if (n_arms != 2) throw ConfigError("only two-armed bandits are supported");
    if (n_trials < 1) throw ConfigError("n_trials must be at least 1");
    if (!(prior_variance > 0)) throw ConfigError("prior_variance must be positive");
    if (!(reward_variance > 0)) throw ConfigError("reward_variance must be positive");
    if (n_games < 0) throw ConfigError("n_games must be non-negative");
  }
};

struct TrialRecord {
  int t = 0;       // 1-based
  int action = 0;  // 1 or 2
  double reward = 0.0;
  std::array<double, 2> action_logprobs{};

  bool operator==(const TrialRecord&) const = default;
};

struct GameRecord {
  std::int64_t game_id = 0;
  std::string persona_id;
  std::string template_id;
  std::vector<double> arm_means;
  std::vector<TrialRecord> trials;
  std::optional<std::string> failure;  // set when the agent aborted the game

  bool operator==(const GameRecord&) const = default;
};

// History lines chained into the bandit prompt, e.g.
// "Machine 1 delivered 2.3 dollars." Rewards print with one decimal; negative
// rewards carry their minus sign.
inline std::string format_history_line(int action, double reward) {
  return "Machine " + std::to_string(action) + " delivered " + text::format_fixed(reward, 1) +
         " dollars.";
}

struct ObservedPull {
  int action = 0;
  double reward = 0.0;
};

// Recovers the (machine, reward) history from a rendered bandit prompt. Used by
// the synthetic agents, which only ever see the prompt text.
inline std::vector<ObservedPull> parse_history(std::string_view prompt) {
  static const std::regex line(R"(Machine ([12]) delivered (-?[0-9]+(?:\.[0-9]+)?) dollars\.)");
  std::vector<ObservedPull> out;
  const std::string s(prompt);
  for (std::sregex_iterator it(s.begin(), s.end(), line), end; it != end; ++it)
    out.push_back({std::stoi((*it)[1].str()), std::stod((*it)[2].str())});
  return out;
}

}  // namespace impersona
