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

// Pipeline stages over a run directory: agent construction, record/replay
// wiring, and the bandit, MMLU and vision stages with their reports.

#pragma once

#include <filesystem>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "impersona/bandit.hpp"
#include "impersona/reasoning.hpp"
#include "impersona/report.hpp"
#include "impersona/store.hpp"
#include "impersona/vision.hpp"
#include "impersona/embedding_backends.hpp"

namespace impersona::pipeline {

// An upstream artifact a stage needs does not exist.
class MissingArtifactError : public StoreError {
 public:
  using StoreError::StoreError;
};

struct AgentOptions {
  std::string kind = "random";  // random | greedy | uncertainty | scripted | http
  double delta = 3.0;           // greedy logit gap
  double gamma = 1.0;           // uncertainty bonus
  double temperature = 0.7;     // free-text sampling temperature
  HttpBackendConfig http;
};

struct Options {
  std::filesystem::path runs_dir = "runs";
  std::string run_id;
  BackendMode mode = BackendMode::live;
  std::filesystem::path fixtures;  // record/replay cache
  std::uint64_t seed = 0;
  std::string templates = "all";  // all | original
  std::vector<std::string> personas;  // roster names or persona ids; empty = stage default
  std::size_t parallelism = 1;
  AgentOptions agent;

  // bandit
  int games = 2000;
  int trials = 10;
  double prior_variance = 10.0;
  double reward_variance = 1.0;

  // mmlu
  std::filesystem::path mmlu_dir = "fixtures/mmlu";
  std::string split = "test";
  std::string predict = "logit_argmax";
  std::string style = "ours";
  int max_retries = 10;

  // vision
  std::filesystem::path classes = "fixtures/toy.txt";
  std::string dataset_id;  // default: stem of `classes`
  std::vector<int> seeds = {0, 1, 2, 3, 4};
  std::string provider = "file:fixtures/toy.emb";  // file:PATH | http
  std::filesystem::path images;  // image embedding file; default: the provider file
  std::string embedding_model;
  std::vector<std::string> pairs;  // "personaA/personaB"; empty = known pairs present

  BanditConfig bandit_config() const {
    BanditConfig c;
    c.n_trials = trials;
    c.n_games = games;
    c.prior_variance = prior_variance;
    c.reward_variance = reward_variance;
    c.master_seed = seed;
    c.validate();
    return c;
  }

  nlohmann::json to_json() const {
    return {{"runs_dir", runs_dir.string()},
            {"run_id", run_id},
            {"mode", std::string(to_string(mode))},
            {"fixtures", fixtures.string()},
            {"seed", seed},
            {"templates", templates},
            {"personas", personas},
            {"parallelism", parallelism},
            {"agent",
             {{"kind", agent.kind},
              {"delta", report::num(agent.delta)},
              {"gamma", report::num(agent.gamma)},
              {"temperature", report::num(agent.temperature)},
              {"backend_url", agent.http.base_url},
              {"model", agent.http.model}}},
            {"bandit",
             {{"games", games},
              {"trials", trials},
              {"prior_variance", report::num(prior_variance)},
              {"reward_variance", report::num(reward_variance)}}},
            {"mmlu",
             {{"data", mmlu_dir.string()},
              {"split", split},
              {"predict", predict},
              {"style", style},
              {"max_retries", max_retries}}},
            {"vision",
             {{"classes", classes.string()},
              {"dataset_id", dataset_id},
              {"seeds", seeds},
              {"provider", provider},
              {"images", images.string()},
              {"embedding_model", embedding_model},
              {"pairs", pairs}}}};
  }
};

enum class Stage { bandit, mmlu, describe, scrub };

inline std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::bandit: return "bandit";
    case Stage::mmlu: return "mmlu";
    case Stage::describe: return "vision_describe";
    case Stage::scrub: return "vision_scrub";
  }
  return "bandit";
}

// ---------------------------------------------------------------------------
// Selection

inline std::vector<PromptTemplate> select_templates(std::string_view which) {
  const auto& all = builtin_templates();
  if (which == "all") return all;
  if (which == "original") return {all.front()};
  throw ConfigError("--templates must be 'all' or 'original', not '" + std::string(which) + "'");
}

// Roster names expand to their members; "age:N" is an age persona; any other
// token must be the id of a member of some roster.
inline std::vector<Persona> select_personas(const std::vector<std::string>& tokens,
                                            const std::vector<std::string>& fallback) {
  const auto& use = tokens.empty() ? fallback : tokens;
  std::vector<Persona> out;
  auto add = [&](const Persona& p) {
    for (const auto& q : out)
      if (q.id == p.id) return;
    out.push_back(p);
  };
  const auto& names = builtin_roster_names();
  for (const auto& t : use) {
    if (std::find(names.begin(), names.end(), t) != names.end()) {
      for (const auto& p : builtin_roster(t)) add(p);
    } else if (t.starts_with("age:")) {
      add(age_persona(text::parse_int(std::string_view(t).substr(4))));
    } else {
      bool found = false;
      for (const auto& n : names)
        for (const auto& p : builtin_roster(n))
          if (!found && p.id == t) {
            add(p);
            found = true;
          }
      if (!found) throw ConfigError("unknown persona or roster '" + t + "'");
    }
  }
  if (out.empty()) throw ConfigError("no personas selected");
  return out;
}

inline std::vector<vision::PersonaPair> parse_pairs(const std::vector<std::string>& specs) {
  std::vector<vision::PersonaPair> out;
  for (const auto& s : specs) {
    const auto slash = s.find('/');
    if (slash == std::string::npos || slash == 0 || slash + 1 == s.size())
      throw ConfigError("pair '" + s + "' must look like personaA/personaB");
    out.push_back({s.substr(0, slash), s.substr(slash + 1)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic behaviour for the scripted agent kind

// MCQ oracle: answers every known item correctly.
inline ScriptedAgent mcq_oracle(const std::map<std::string, std::vector<reasoning::McqItem>>& tasks) {
  auto answers = std::make_shared<std::vector<std::pair<std::string, std::string>>>();
  for (const auto& [_, items] : tasks)
    for (const auto& it : items)
      answers->emplace_back(reasoning::detail::question_block(it), reasoning::option_letters()[it.answer_index]);
  return ScriptedAgent::answer_by([answers](std::string_view prompt) {
    for (const auto& [block, letter] : *answers)
      if (prompt.find(block) != std::string_view::npos) return letter;
    return std::string();
  });
}

inline std::string class_name_in_prompt(std::string_view prompt) {
  const auto q = prompt.rfind("Q: What is ");
  const auto end = prompt.rfind("?\nA: It is");
  if (q == std::string_view::npos || end == std::string_view::npos || end < q) return {};
  auto rest = prompt.substr(q + 11, end - q - 11);
  for (std::string_view article : {"an ", "a "})
    if (rest.starts_with(article)) return std::string(rest.substr(article.size()));
  return std::string(rest);
}

// Describes the class by name, so the scrubber has work to do.
inline ScriptedAgent scripted_describer() {
  return ScriptedAgent(
      [](std::string_view prompt, std::size_t) {
        const auto name = class_name_in_prompt(prompt);
        if (name.empty()) throw FixtureError("scripted describer: not a description prompt");
        return " a " + name + " with a distinctive shape. The " + name + " is easy to recognize. " +
               vision::plural_of(name) + " are often photographed. Many people can spot a " + name +
               " from far away.";
      },
      nullptr, "synthetic:scripted-describer");
}

// Rewrites the sentence in a scrub prompt by replacing every name form with
// "this one".
inline ScriptedAgent scripted_rewriter() {
  return ScriptedAgent(
      [](std::string_view prompt, std::size_t) {
        const std::string p(prompt);
        const auto name_at = p.rfind("Name: ");
        const auto sent_at = p.rfind("Sentence: ");
        if (name_at == std::string::npos || sent_at == std::string::npos)
          throw FixtureError("scripted rewriter: not a scrub prompt");
        const auto name = p.substr(name_at + 6, p.find('\n', name_at) - name_at - 6);
        auto sentence = p.substr(sent_at + 10, p.find('\n', sent_at) - sent_at - 10);
        for (const auto& form : {vision::plural_of(name), name})
          for (auto pos = text::find_icase(sentence, form); pos != std::string::npos;
               pos = text::find_icase(sentence, form))
            sentence.replace(pos, form.size(), "this one");
        return " " + sentence;
      },
      nullptr, "synthetic:scripted-rewriter");
}

// ---------------------------------------------------------------------------
// Agents and the run directory

struct Backend {
  std::unique_ptr<Agent> agent;
  std::shared_ptr<ReplayCache> cache;
};

inline std::shared_ptr<ReplayCache> open_cache(const Options& o) {
  if (o.mode == BackendMode::live) return nullptr;
  if (o.fixtures.empty()) throw ConfigError("--mode " + std::string(to_string(o.mode)) + " needs --fixtures");
  if (o.mode != BackendMode::record && !std::filesystem::exists(o.fixtures))
    throw MissingArtifactError("fixture file '" + o.fixtures.string() + "' does not exist");
  try {
    return std::make_shared<ReplayCache>(o.fixtures, o.mode == BackendMode::record);
  } catch (const StoreError& e) {
    throw FixtureError("unreadable fixture file: " + std::string(e.what()));
  }
}

inline std::unique_ptr<Agent> make_live_agent(const Options& o, Stage stage,
                                              const std::map<std::string, std::vector<reasoning::McqItem>>* items) {
  const auto& k = o.agent.kind;
  if (k == "random") return std::make_unique<RandomAgent>(o.seed);
  if (k == "greedy") return std::make_unique<GreedyBanditAgent>(o.agent.delta);
  if (k == "uncertainty") return std::make_unique<UncertaintyAgent>(o.agent.gamma);
  if (k == "http") return std::make_unique<HttpChatAgent>(o.agent.http);
  if (k == "scripted") {
    switch (stage) {
      case Stage::bandit: return std::make_unique<ScriptedAgent>(ScriptedAgent::fixed_answer("1"));
      case Stage::mmlu: return std::make_unique<ScriptedAgent>(mcq_oracle(*items));
      case Stage::describe: return std::make_unique<ScriptedAgent>(scripted_describer());
      case Stage::scrub: return std::make_unique<ScriptedAgent>(scripted_rewriter());
    }
  }
  throw ConfigError("unknown agent '" + k + "' (random, greedy, uncertainty, scripted, http)");
}

inline Backend make_backend(const Options& o, Stage stage,
                            const std::map<std::string, std::vector<reasoning::McqItem>>* items = nullptr) {
  Backend b;
  b.cache = open_cache(o);
  auto live = make_live_agent(o, stage, items);
  if (o.mode == BackendMode::live) b.agent = std::move(live);
  else b.agent = std::make_unique<CachingAgent>(std::move(live), b.cache, o.mode);
  return b;
}

inline store::RunStore run_store(const Options& o) {
  if (o.run_id.empty()) throw ConfigError("--run-id is required");
  return store::RunStore(o.runs_dir, o.run_id);
}

// Creates or updates the manifest with this stage's configuration.
inline store::RunStore begin_stage(const Options& o, std::string_view stage, const std::string& backend_id) {
  auto s = run_store(o);
  store::RunManifest m;
  if (s.exists()) {
    m = s.read_manifest();
  } else {
    m.run_id = o.run_id;
    m.created_at = store::utc_timestamp();
  }
  m.config_snapshot[std::string(stage)] = o.to_json();
  m.backend_id = backend_id;
  m.mode = o.mode;
  s.write_manifest(m);
  return s;
}

inline store::RunStore existing_run(const Options& o) {
  auto s = run_store(o);
  if (!s.exists()) throw MissingArtifactError("run '" + o.run_id + "' has no manifest under " + o.runs_dir.string());
  return s;
}

template <typename T>
std::vector<T> require_records(const store::RunStore& s, std::string_view name, std::string_view hint) {
  if (!s.has<T>(name))
    throw MissingArtifactError("missing " + s.path_of<T>(name).string() + " (run '" + std::string(hint) +
                               "' first)");
  return s.read<T>({}, name);
}

// ---------------------------------------------------------------------------
// Bandit

inline std::size_t bandit_run(const Options& o) {
  const auto cfg = o.bandit_config();
  auto backend = make_backend(o, Stage::bandit);
  const auto personas = select_personas(o.personas, {"ages"});
  const auto templates = select_templates(o.templates);
  auto s = begin_stage(o, "bandit", backend.agent->backend_id());
  std::vector<GameRecord> games;
  std::size_t failed = 0;
  std::int64_t next_id = 0;
  for (const auto& p : personas)
    for (const auto& t : templates) {
      auto r = bandit::run_games(cfg, p, t, *backend.agent, o.parallelism, next_id);
      next_id += cfg.n_games;
      failed += r.n_failed;
      games.insert(games.end(), std::make_move_iterator(r.games.begin()), std::make_move_iterator(r.games.end()));
    }
  s.write_new<GameRecord>(games);
  s.note_count<GameRecord>(games.size());
  return failed;
}

inline BanditConfig bandit_config_of(const store::RunStore& s) {
  const auto m = s.read_manifest();
  if (!m.config_snapshot.contains("bandit")) throw MissingArtifactError("run has no bandit stage");
  const auto& b = m.config_snapshot.at("bandit").at("bandit");
  BanditConfig c;
  c.n_trials = b.at("trials").get<int>();
  c.n_games = b.at("games").get<int>();
  c.prior_variance = std::stod(b.at("prior_variance").get<std::string>());
  c.reward_variance = std::stod(b.at("reward_variance").get<std::string>());
  c.master_seed = m.config_snapshot.at("bandit").at("seed").get<std::uint64_t>();
  return c;
}

inline report::BanditReport bandit_analyze(const Options& o) {
  const auto s = existing_run(o);
  const auto games = require_records<GameRecord>(s, {}, "bandit run");
  return report::write_bandit_report(games, bandit_config_of(s), s.report_dir());
}

// ---------------------------------------------------------------------------
// MMLU

inline std::size_t mmlu_run(const Options& o) {
  if (!std::filesystem::is_directory(o.mmlu_dir))
    throw MissingArtifactError("MMLU directory '" + o.mmlu_dir.string() + "' does not exist");
  const auto tasks = reasoning::load_mmlu_dir(o.mmlu_dir, o.split);
  if (tasks.empty())
    throw MissingArtifactError("no '*_" + o.split + ".csv' files in '" + o.mmlu_dir.string() + "'");
  auto backend = make_backend(o, Stage::mmlu, &tasks);
  const auto personas = select_personas(o.personas, {"mmlu-experts", "neutral"});
  const auto templates = select_templates(o.templates);
  reasoning::EvaluateOptions eo;
  eo.mode = reasoning::parse_predict_mode(o.predict);
  eo.style = reasoning::parse_prompt_style(o.style);
  eo.max_retries = o.max_retries;
  eo.parallelism = o.parallelism;
  auto s = begin_stage(o, "mmlu", backend.agent->backend_id());
  std::vector<reasoning::McqRecord> records;
  std::vector<reasoning::TaskResult> results;
  for (const auto& [task_id, items] : tasks)
    for (const auto& p : personas)
      for (const auto& t : templates) {
        eo.task_name = reasoning::detail::task_display_name(task_id);
        auto ev = reasoning::evaluate_task(items, p, t, *backend.agent, eo);
        results.push_back(ev.result);
        records.insert(records.end(), ev.records.begin(), ev.records.end());
      }
  s.write_new<reasoning::McqRecord>(records);
  s.write_new<reasoning::TaskResult>(results);
  s.note_count<reasoning::McqRecord>(records.size());
  s.note_count<reasoning::TaskResult>(results.size());
  return records.size();
}

inline reasoning::CategoryReport mmlu_report(const Options& o) {
  const auto s = existing_run(o);
  const auto results = require_records<reasoning::TaskResult>(s, {}, "mmlu run");
  return report::write_mmlu_report(results, mmlu_taxonomy(), s.report_dir());
}

// ---------------------------------------------------------------------------
// Vision

inline constexpr std::string_view kScrubbedFile = "cleaned_descriptions.jsonl";

inline vision::Dataset load_classes(const Options& o) {
  if (!std::filesystem::exists(o.classes))
    throw MissingArtifactError("class list '" + o.classes.string() + "' does not exist");
  return vision::load_dataset(o.classes.string(), o.dataset_id);
}

inline std::size_t vision_describe(const Options& o) {
  const auto dataset = load_classes(o);
  auto backend = make_backend(o, Stage::describe);
  const auto personas = select_personas(o.personas, {"gender", "race", "vision-experts"});
  const auto templates = select_templates(o.templates);
  vision::DescribeOptions d;
  d.seeds = o.seeds;
  d.params.temperature = o.agent.temperature;
  d.parallelism = o.parallelism;
  auto s = begin_stage(o, "vision_describe", backend.agent->backend_id());
  std::vector<vision::ClassDescription> out;
  for (const auto& t : templates) {
    auto part = vision::generate_descriptions(dataset, personas, t, *backend.agent, d);
    out.insert(out.end(), part.begin(), part.end());
  }
  std::size_t failed = 0;
  for (const auto& x : out) failed += x.failure.has_value();
  s.write_new<vision::ClassDescription>(out);
  s.note_count<vision::ClassDescription>(out.size());
  return failed;
}

inline std::size_t vision_scrub(const Options& o) {
  const auto s0 = existing_run(o);
  auto descriptions = require_records<vision::ClassDescription>(s0, {}, "vision describe");
  auto backend = make_backend(o, Stage::scrub);
  auto s = begin_stage(o, "vision_scrub", backend.agent->backend_id());
  vision::scrub_all(descriptions, *backend.agent, o.parallelism);
  std::size_t kept = 0;
  for (const auto& d : descriptions)
    for (const auto& e : d.scrub_log) kept += e.action == vision::ScrubAction::kept_original;
  s.write_new<vision::ClassDescription>(descriptions, kScrubbedFile);
  return kept;
}

inline std::unique_ptr<vision::EmbeddingProvider> make_provider(const Options& o,
                                                                std::shared_ptr<ReplayCache> cache) {
  if (o.provider.starts_with("file:")) {
    const std::filesystem::path p = o.provider.substr(5);
    if (!std::filesystem::exists(p)) throw MissingArtifactError("embedding file '" + p.string() + "' does not exist");
    return std::make_unique<vision::FileEmbeddingProvider>(p);
  }
  if (o.provider == "http") {
    auto cfg = o.agent.http;
    if (!o.embedding_model.empty()) cfg.model = o.embedding_model;
    std::unique_ptr<vision::EmbeddingProvider> live = std::make_unique<vision::HttpEmbeddingProvider>(cfg);
    if (o.mode == BackendMode::live) return live;
    return std::make_unique<vision::CachingEmbeddingProvider>(std::move(live), std::move(cache), o.mode);
  }
  throw ConfigError("--provider must be file:PATH or http, not '" + o.provider + "'");
}

inline std::vector<vision::ClassificationRun> vision_classify(const Options& o) {
  const auto s0 = existing_run(o);
  const auto dataset = load_classes(o);
  const auto descriptions = require_records<vision::ClassDescription>(s0, kScrubbedFile, "vision scrub");
  const bool http = o.provider == "http";
  auto provider = make_provider(o, http ? open_cache(o) : nullptr);
  std::filesystem::path images_path = o.images;
  if (images_path.empty()) {
    if (!o.provider.starts_with("file:")) throw ConfigError("--images is required with an http provider");
    images_path = o.provider.substr(5);
  }
  if (!std::filesystem::exists(images_path))
    throw MissingArtifactError("image embedding file '" + images_path.string() + "' does not exist");
  const auto images = vision::images_from(vision::FileEmbeddingProvider(images_path), dataset);
  auto s = begin_stage(o, "vision_classify", provider->provider_id());
  const auto embedded = vision::embed_descriptions(descriptions, *provider);
  auto runs = vision::classify_all(descriptions, embedded, images, dataset);
  s.write_new<vision::ClassificationRun>(runs);
  s.note_count<vision::ClassificationRun>(runs.size());
  return runs;
}

inline std::vector<vision::BiasRow> vision_report(const Options& o) {
  const auto s = existing_run(o);
  const auto runs = require_records<vision::ClassificationRun>(s, {}, "vision classify");
  std::vector<vision::PersonaPair> pairs = parse_pairs(o.pairs);
  if (o.pairs.empty()) {
    std::set<std::string> present;
    for (const auto& r : runs) present.insert(r.persona_id);
    for (const auto& p : report::default_bias_pairs())
      if (present.count(p.a) && present.count(p.b)) pairs.push_back(p);
  }
  return report::write_vision_report(runs, pairs, s.report_dir());
}

// Regenerates every report whose records exist; returns the stages reported.
inline std::vector<std::string> report_all(const Options& o) {
  const auto s = existing_run(o);
  std::vector<std::string> done;
  if (s.has<GameRecord>()) {
    bandit_analyze(o);
    done.push_back("bandit");
  }
  if (s.has<reasoning::TaskResult>()) {
    mmlu_report(o);
    done.push_back("mmlu");
  }
  if (s.has<vision::ClassificationRun>()) {
    vision_report(o);
    done.push_back("vision");
  }
  if (done.empty()) throw MissingArtifactError("run '" + o.run_id + "' has no records to report");
  return done;
}

}  // namespace impersona::pipeline
