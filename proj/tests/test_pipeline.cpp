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

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "impersona/pipeline.hpp"

namespace fs = std::filesystem;
using namespace impersona;
using namespace impersona::pipeline;

namespace {

const fs::path kSource = IMPERSONA_SOURCE_DIR;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("impersona_pipeline_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Options base(const fs::path& dir) {
  Options o;
  o.runs_dir = dir / "runs";
  o.run_id = "t1";
  o.templates = "original";
  o.mmlu_dir = kSource / "fixtures/mmlu";
  o.classes = kSource / "fixtures/toy.txt";
  o.provider = "file:" + (kSource / "fixtures/toy.emb").string();
  return o;
}

}  // namespace

TEST(Report, NumRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23}) EXPECT_EQ(std::stod(report::num(v)), v);
  EXPECT_EQ(report::num(std::numeric_limits<double>::quiet_NaN()), "nan");
  EXPECT_EQ(report::num(-std::numeric_limits<double>::infinity()), "-inf");
}

TEST(Report, PersonaAge) {
  EXPECT_EQ(report::persona_age("age:13"), 13);
  EXPECT_FALSE(report::persona_age("gender:man").has_value());
  EXPECT_FALSE(report::persona_age("age:x").has_value());
}

TEST(Report, SvgIsWellFormedText) {
  const auto s = report::svg::line_chart("t", "x", "y", {{"a", {{1, 2, 1.5, 2.5}, {2, 3, 2.5, 3.5}}}});
  EXPECT_TRUE(s.starts_with("<svg"));
  EXPECT_NE(s.find("</svg>"), std::string::npos);
  const auto b = report::svg::bar_chart("t", "y", {{"g", "s<&>", 0.5, 0.4, 0.6}}, 0.25);
  EXPECT_NE(b.find("s&lt;&amp;&gt;"), std::string::npos);
}

TEST(Selection, Templates) {
  EXPECT_EQ(select_templates("all").size(), builtin_templates().size());
  ASSERT_EQ(select_templates("original").size(), 1u);
  EXPECT_THROW(select_templates("some"), ConfigError);
}

TEST(Selection, Personas) {
  const auto p = select_personas({"gender", "age:9", "race:white", "gender:man"}, {});
  ASSERT_EQ(p.size(), 4u);
  EXPECT_EQ(p[2].id, "age:9");
  EXPECT_EQ(p[3].id, "race:white");
  EXPECT_EQ(select_personas({}, {"ages"}).size(), builtin_roster("ages").size());
  EXPECT_THROW(select_personas({"nobody"}, {}), ConfigError);
}

TEST(Selection, Pairs) {
  const auto p = parse_pairs({"gender:man/gender:woman"});
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0].b, "gender:woman");
  EXPECT_THROW(parse_pairs({"gender:man"}), ConfigError);
  EXPECT_THROW(parse_pairs({"/x"}), ConfigError);
}

TEST(Scripted, DescriberAndRewriter) {
  auto d = scripted_describer();
  const auto prompt = vision::build_description_prompt(age_persona(7), builtin_templates()[0], "Amber Owl");
  const auto text = d.generate(prompt, GenerationParams::free_text());
  EXPECT_TRUE(vision::mentions_class(text, "Amber Owl"));
  auto r = scripted_rewriter();
  const auto out = r.generate(vision::build_scrub_prompt("The Amber Owl flies.", "Amber Owl"), vision::scrub_params());
  EXPECT_EQ(out, " The this one flies.");
}

TEST(Pipeline, BanditRunAndAnalyze) {
  TempDir t;
  auto o = base(t.path);
  o.games = 60;
  o.agent.kind = "uncertainty";
  EXPECT_EQ(bandit_run(o), 0u);
  store::RunStore s(o.runs_dir, o.run_id);
  const auto games = s.read<GameRecord>();
  EXPECT_EQ(games.size(), 60u * builtin_roster("ages").size());
  const auto m = s.read_manifest();
  EXPECT_TRUE(m.config_snapshot.contains("bandit"));
  EXPECT_EQ(m.backend_id, UncertaintyAgent(1.0).backend_id());
  EXPECT_EQ(bandit_config_of(s).n_games, 60);

  const auto rep = bandit_analyze(o);
  EXPECT_EQ(rep.fits.size(), builtin_roster("ages").size());
  for (const char* f : {"reward_curves.csv", "probit_fits.csv", "age_effects.csv", "reward_curves.svg",
                        "betas_vs_age.svg"})
    EXPECT_TRUE(fs::exists(s.report_dir() / f)) << f;
  // Records are never rewritten.
  EXPECT_THROW(bandit_run(o), StateError);
}

TEST(Pipeline, BanditRunIsDeterministicAcrossParallelism) {
  TempDir t;
  auto o = base(t.path);
  o.games = 40;
  o.personas = {"age:4", "age:20"};
  o.agent.kind = "random";
  o.seed = 3;
  bandit_run(o);
  o.run_id = "t2";
  o.parallelism = 4;
  bandit_run(o);
  EXPECT_EQ(slurp(o.runs_dir / "t1/games.jsonl"), slurp(o.runs_dir / "t2/games.jsonl"));
}

TEST(Pipeline, MissingArtifacts) {
  TempDir t;
  auto o = base(t.path);
  EXPECT_THROW(bandit_analyze(o), MissingArtifactError);
  o.mmlu_dir = t.path / "none";
  EXPECT_THROW(mmlu_run(o), MissingArtifactError);
  o = base(t.path);
  o.mode = BackendMode::replay;
  o.fixtures = t.path / "absent.jsonl";
  EXPECT_THROW(bandit_run(o), MissingArtifactError);
  o.fixtures.clear();
  EXPECT_THROW(bandit_run(o), ConfigError);
  o = base(t.path);
  o.run_id = "../escape";
  EXPECT_THROW(bandit_run(o), ConfigError);
}

TEST(Pipeline, MmlScriptedOracleIsPerfect) {
  TempDir t;
  auto o = base(t.path);
  o.agent.kind = "scripted";
  o.parallelism = 4;
  EXPECT_GT(mmlu_run(o), 0u);
  store::RunStore s(o.runs_dir, o.run_id);
  for (const auto& r : s.read<reasoning::TaskResult>()) EXPECT_EQ(r.accuracy, std::optional<double>(1.0));
  mmlu_report(o);
  EXPECT_TRUE(fs::exists(s.report_dir() / "mmlu_domains.csv"));
  EXPECT_EQ(report_all(o), std::vector<std::string>{"mmlu"});
}

TEST(Pipeline, VisionEndToEndOnToyFixture) {
  TempDir t;
  auto o = base(t.path);
  o.agent.kind = "scripted";
  o.seeds = {0, 1};
  EXPECT_EQ(vision_describe(o), 0u);
  EXPECT_EQ(vision_scrub(o), 0u);
  store::RunStore s(o.runs_dir, o.run_id);
  for (const auto& d : s.read<vision::ClassDescription>({}, kScrubbedFile))
    EXPECT_FALSE(vision::mentions_class(d.cleaned_text, d.class_name)) << d.cleaned_text;

  const auto runs = vision_classify(o);
  EXPECT_EQ(runs.size(), 6u * 2u);
  for (const auto& r : runs) EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
  const auto rows = vision_report(o);
  EXPECT_EQ(rows.size(), 3u);
  for (const char* f : {"vision_accuracy.csv", "vision_bias.csv", "vision_accuracy.svg"})
    EXPECT_TRUE(fs::exists(s.report_dir() / f)) << f;
}

TEST(Pipeline, RecordThenReplayIsBitIdentical) {
  TempDir t;
  auto o = base(t.path);
  o.agent.kind = "scripted";
  o.seeds = {0};
  o.personas = {"gender"};
  o.mode = BackendMode::record;
  o.fixtures = t.path / "fx.jsonl";
  vision_describe(o);
  vision_scrub(o);
  o.run_id = "t2";
  o.mode = BackendMode::replay_strict;
  EXPECT_EQ(vision_describe(o), 0u);
  vision_scrub(o);
  for (const char* f : {"descriptions.jsonl", "cleaned_descriptions.jsonl"})
    EXPECT_EQ(slurp(o.runs_dir / "t1" / f), slurp(o.runs_dir / "t2" / f)) << f;
}

TEST(Pipeline, RandomPlayShowsNoValueSignal) {
  TempDir t;
  auto o = base(t.path);
  o.games = 2000;
  o.personas = {"age:20"};
  o.agent.kind = "random";
  o.parallelism = 8;
  bandit_run(o);
  const auto rep = bandit_analyze(o);
  ASSERT_EQ(rep.fits.size(), 1u);
  ASSERT_TRUE(rep.fits[0].fit.has_value());
  const auto& fit = *rep.fits[0].fit;
  EXPECT_LT(std::abs(fit.b1()), 3 * fit.se1());
}
