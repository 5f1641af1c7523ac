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

#include <cmath>

#include <gtest/gtest.h>

#include "impersona/bandit.hpp"
#include "impersona/text.hpp"

namespace impersona::bandit {
namespace {

const std::string kGolden = std::string(IMPERSONA_SOURCE_DIR) + "/tests/golden/";

TEST(Prompt, MatchesGoldenFiles) {
  EXPECT_EQ(build_bandit_prompt(age_persona(2), builtin_templates()[0], {}),
            text::read_file(kGolden + "bandit_prompt_empty.txt"));
  const std::vector<TrialRecord> history = {
      {1, 1, 2.3, {}}, {2, 2, -0.7, {}}, {3, 2, 10.96, {}}};
  EXPECT_EQ(build_bandit_prompt(age_persona(13), find_template("imagine"), history),
            text::read_file(kGolden + "bandit_prompt_history.txt"));
}

TEST(Prompt, HistoryLinesAndCue) {
  const auto empty = build_bandit_prompt(age_persona(7), builtin_templates()[4], {});
  EXPECT_EQ(empty.find("delivered"), std::string::npos);
  const std::vector<TrialRecord> h = {{1, 1, 2.3, {}}};
  const auto one = build_bandit_prompt(age_persona(7), builtin_templates()[4], h);
  EXPECT_NE(one.find("\nMachine 1 delivered 2.3 dollars.\n"), std::string::npos);
  for (const auto& p : {empty, one}) EXPECT_TRUE(p.ends_with("You choose machine"));
  EXPECT_EQ(format_history_line(2, -0.04), "Machine 2 delivered 0.0 dollars.");
  EXPECT_EQ(format_history_line(2, -0.06), "Machine 2 delivered -0.1 dollars.");
}

TEST(Prompt, RejectsFullHistory) {
  std::vector<TrialRecord> h(10, TrialRecord{1, 1, 0.0, {}});
  EXPECT_THROW(build_bandit_prompt(age_persona(7), builtin_templates()[0], h), StateError);
}

TEST(Prompt, HistoryParsesBack) {
  const std::vector<TrialRecord> h = {{1, 2, -3.14, {}}, {2, 1, 0.05, {}}};
  const auto pulls = parse_history(build_bandit_prompt(age_persona(4), builtin_templates()[0], h));
  ASSERT_EQ(pulls.size(), 2u);
  EXPECT_EQ(pulls[0].action, 2);
  EXPECT_DOUBLE_EQ(pulls[0].reward, -3.1);
  EXPECT_EQ(pulls[1].action, 1);
}

TEST(Config, Invariants) {
  BanditConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.prior_variance = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.reward_variance = -1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.n_trials = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.n_arms = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(NewGame, DeterministicPerSeedAndId) {
  BanditConfig cfg;
  cfg.master_seed = 42;
  EXPECT_EQ(new_game(cfg, 7).arm_means, new_game(cfg, 7).arm_means);
  EXPECT_NE(new_game(cfg, 7).arm_means, new_game(cfg, 8).arm_means);
  cfg.master_seed = 43;
  BanditConfig other;
  other.master_seed = 42;
  EXPECT_NE(new_game(cfg, 7).arm_means, new_game(other, 7).arm_means);
  EXPECT_TRUE(new_game(cfg, 7).trials.empty());
}

TEST(NewGame, ArmMeansFollowThePrior) {
  BanditConfig cfg;
  const int n = 100000;
  double sum = 0, sumsq = 0;
  for (int g = 0; g < n / 2; ++g)
    for (double m : new_game(cfg, g).arm_means) {
      sum += m;
      sumsq += m * m;
    }
  const double mean = sum / n;
  const double var = (sumsq - n * mean * mean) / (n - 1);
  EXPECT_LT(std::abs(mean), 3 * std::sqrt(10.0 / n));
  // SE of a normal sample variance: sigma^2 * sqrt(2 / (n - 1)).
  EXPECT_LT(std::abs(var - 10.0), 3 * 10.0 * std::sqrt(2.0 / (n - 1)));
}

TEST(SampleAction, ClosedFormAndFrequency) {
  RngStream rng(3);
  const int n = 100000;
  int arm2 = 0, arm1_equal = 0;
  for (int i = 0; i < n; ++i) {
    arm2 += sample_action({0.0, std::log(3.0)}, rng) == 2;
    arm1_equal += sample_action({-1.0, -1.0}, rng) == 1;
  }
  const double sd = std::sqrt(0.75 * 0.25 / n);
  EXPECT_LT(std::abs(arm2 / double(n) - 0.75), 3 * sd);
  EXPECT_LT(std::abs(arm1_equal / double(n) - 0.5), 3 * std::sqrt(0.25 / n));
  EXPECT_THROW(sample_action({NAN, 0.0}, rng), NumericError);
  EXPECT_THROW(sample_action({0.0, -INFINITY}, rng), NumericError);
}

TEST(Step, RewardVarianceIsAVariance) {
  BanditConfig cfg;
  cfg.n_trials = 100000;
  GameRecord g;
  g.arm_means = {5.0, -5.0};
  RngStream rng(9);
  double sum = 0, sumsq = 0;
  for (int i = 0; i < cfg.n_trials; ++i) {
    const double r = step(g, cfg, 1, rng);
    sum += r;
    sumsq += r * r;
  }
  const double n = cfg.n_trials;
  const double mean = sum / n;
  const double var = (sumsq - n * mean * mean) / (n - 1);
  EXPECT_LT(std::abs(mean - 5.0), 3 * std::sqrt(1.0 / n));
  EXPECT_LT(std::abs(var - 1.0), 3 * std::sqrt(2.0 / (n - 1)));
  EXPECT_EQ(g.trials.back().t, cfg.n_trials);
}

TEST(Step, RejectsOverfullGamesAndBadActions) {
  BanditConfig cfg;
  auto g = new_game(cfg, 0);
  RngStream rng(1);
  for (int t = 0; t < 10; ++t) step(g, cfg, 1 + t % 2, rng);
  EXPECT_THROW(step(g, cfg, 1, rng), StateError);
  auto fresh = new_game(cfg, 0);
  EXPECT_THROW(step(fresh, cfg, 0, rng), InputError);
}

TEST(PlayGame, ScriptedTranscriptIsReproduced) {
  BanditConfig cfg;
  const std::vector<std::string> script = {"1", "2", "2", "1", "1", "1", "2", "1", "2", "2"};
  auto agent = ScriptedAgent::answer_transcript(script);
  const auto g = play_game(cfg, 0, age_persona(20), builtin_templates()[0], agent);
  ASSERT_FALSE(g.failure);
  ASSERT_EQ(g.trials.size(), 10u);
  for (std::size_t t = 0; t < 10; ++t) {
    EXPECT_EQ(std::to_string(g.trials[t].action), script[t]);
    EXPECT_EQ(g.trials[t].t, static_cast<int>(t) + 1);
  }
}

TEST(PlayGame, AgentErrorsMarkTheGameFailed) {
  BanditConfig cfg;
  cfg.n_games = 3;
  auto agent = ScriptedAgent::answer_transcript({"1", "2", "1", "1"});
  const auto out = run_games(cfg, age_persona(20), builtin_templates()[0], agent);
  EXPECT_EQ(out.n_failed, 3u);
  EXPECT_EQ(out.games[0].trials.size(), 4u);
  EXPECT_TRUE(out.games[0].failure);
}

TEST(RunGames, ParallelismNeverChangesRecords) {
  BanditConfig cfg;
  cfg.n_games = 64;
  cfg.master_seed = 17;
  GreedyBanditAgent agent(3.0);
  const auto serial = run_games(cfg, age_persona(4), builtin_templates()[2], agent, 1);
  const auto parallel = run_games(cfg, age_persona(4), builtin_templates()[2], agent, 8);
  EXPECT_EQ(serial.games, parallel.games);
  // Games 32..63 played on their own reproduce the tail of the batch.
  BanditConfig tail = cfg;
  tail.n_games = 32;
  const auto shifted = run_games(tail, age_persona(4), builtin_templates()[2], agent, 3, 32);
  for (int i = 0; i < 32; ++i) EXPECT_EQ(shifted.games[i], serial.games[32 + i]);
  EXPECT_EQ(serial.games[5].persona_id, "age:4");
  EXPECT_EQ(serial.games[5].template_id, "imagine");
}

std::vector<double> mean_reward_per_trial(const std::vector<GameRecord>& games, int n_trials) {
  std::vector<double> m(n_trials, 0.0);
  for (const auto& g : games)
    for (const auto& t : g.trials) m[t.t - 1] += t.reward;
  for (auto& v : m) v /= static_cast<double>(games.size());
  return m;
}

TEST(RunGames, RandomPlayEarnsNothingOnAverage) {
  BanditConfig cfg;
  const auto out = run_games(cfg, age_persona(20), builtin_templates()[0], RandomAgent(1), 1);
  EXPECT_EQ(out.n_failed, 0u);
  double total = 0;
  for (double v : mean_reward_per_trial(out.games, cfg.n_trials)) total += v;
  const double overall = total / cfg.n_trials;
  // Per-pull variance is prior + noise (11); pulls within a game share arm
  // means, so bound the SE using whole-game averages.
  std::vector<double> per_game;
  for (const auto& g : out.games) {
    double s = 0;
    for (const auto& t : g.trials) s += t.reward;
    per_game.push_back(s / cfg.n_trials);
  }
  const auto ci = stats::mean_ci95(per_game);
  EXPECT_NEAR(ci.mean, overall, 1e-9);
  EXPECT_LT(std::abs(overall), 3 * ci.half_width() / 1.96);
}

TEST(RunGames, GreedyRewardRisesOverTrialsAndBeatsRandom) {
  BanditConfig cfg;
  const auto greedy = run_games(cfg, age_persona(20), builtin_templates()[0], GreedyBanditAgent(3.0), 1);
  const auto random = run_games(cfg, age_persona(20), builtin_templates()[0], RandomAgent(2), 1);
  const auto g = mean_reward_per_trial(greedy.games, cfg.n_trials);
  EXPECT_GT(g[9], g[0]);
  EXPECT_GT(g[4], g[0]);
  std::vector<double> diff;
  for (std::size_t i = 0; i < greedy.games.size(); ++i) {
    double d = 0;
    for (int t = 1; t < cfg.n_trials; ++t)
      d += greedy.games[i].trials[t].reward - random.games[i].trials[t].reward;
    diff.push_back(d / (cfg.n_trials - 1));
  }
  const auto ci = stats::mean_ci95(diff);
  EXPECT_GT(ci.mean, 3 * ci.half_width() / 1.96);
}

}  // namespace
}  // namespace impersona::bandit
