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

// impersona: command-line front end for the experiment pipeline.
//
// Exit codes: 0 success, 1 unexpected error, 2 usage or configuration error,
// 3 missing upstream data, 4 backend or fixture failure.

#include <iostream>
#include <string>

#include "impersona/pipeline.hpp"

#include <CLI11.hpp>

namespace {

using namespace impersona;
using namespace impersona::pipeline;

enum Exit { kOk = 0, kOther = 1, kUsage = 2, kMissing = 3, kBackend = 4 };

int exit_code_of(const std::exception& e) {
  if (dynamic_cast<const MissingArtifactError*>(&e)) return kMissing;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const InputError*>(&e) ||
      dynamic_cast<const LookupError*>(&e))
    return kUsage;
  if (dynamic_cast<const TransportError*>(&e) || dynamic_cast<const FixtureError*>(&e) ||
      dynamic_cast<const TokenizationError*>(&e))
    return kBackend;
  return kOther;
}

struct Cli {
  Options opt;
  std::string mode = "live";
  std::size_t max_in_flight = 4;
};

void add_common(CLI::App& app, Cli& c) {
  auto& o = c.opt;
  app.add_option("--runs-dir", o.runs_dir, "directory holding run directories")->capture_default_str();
  app.add_option("--run-id", o.run_id, "run directory name");
  app.add_option("--mode", c.mode, "live, record, replay or replay-strict")
      ->check(CLI::IsMember({"live", "record", "replay", "replay-strict"}))
      ->capture_default_str();
  app.add_option("--fixtures", o.fixtures, "record/replay fixture file (JSONL)");
  app.add_option("--seed", o.seed, "master seed")->capture_default_str();
  app.add_option("--templates", o.templates, "all or original")->capture_default_str();
  app.add_option("--personas", o.personas, "roster names or persona ids")->delimiter(',');
  app.add_option("--parallelism", o.parallelism, "concurrent agent calls")->capture_default_str();
  app.add_option("--agent", o.agent.kind, "random, greedy, uncertainty, scripted or http")
      ->capture_default_str();
  app.add_option("--delta", o.agent.delta, "greedy agent logit gap")->capture_default_str();
  app.add_option("--gamma", o.agent.gamma, "uncertainty agent exploration bonus")->capture_default_str();
  app.add_option("--temperature", o.agent.temperature, "free-text sampling temperature")->capture_default_str();
  app.add_option("--backend-url", o.agent.http.base_url, "HTTP backend base URL")->capture_default_str();
  app.add_option("--model", o.agent.http.model, "model name sent to the HTTP backend");
  app.add_option("--api-key-env", o.agent.http.api_key_env, "environment variable holding the API key")
      ->capture_default_str();
  app.add_option("--max-in-flight", c.max_in_flight, "HTTP request concurrency cap")->capture_default_str();
}

void add_bandit(CLI::App& app, Options& o) {
  app.add_option("--games", o.games, "games per persona and template")->capture_default_str();
  app.add_option("--trials", o.trials, "trials per game")->capture_default_str();
  app.add_option("--prior-variance", o.prior_variance)->capture_default_str();
  app.add_option("--reward-variance", o.reward_variance)->capture_default_str();
}

void add_mmlu(CLI::App& app, Options& o) {
  app.add_option("--data", o.mmlu_dir, "directory of <task>_<split>.csv files")->capture_default_str();
  app.add_option("--split", o.split)->capture_default_str();
  app.add_option("--predict", o.predict, "logit_argmax or chat_parse")->capture_default_str();
  app.add_option("--style", o.style, "ours, official or chat_suffix")->capture_default_str();
  app.add_option("--max-retries", o.max_retries, "chat_parse retries per item")->capture_default_str();
}

void add_classes(CLI::App& app, Options& o) {
  app.add_option("--classes", o.classes, "class list, one name per line")->capture_default_str();
  app.add_option("--dataset-id", o.dataset_id, "dataset id (default: class list file stem)");
}

void add_classify(CLI::App& app, Options& o) {
  app.add_option("--provider", o.provider, "file:PATH or http")->capture_default_str();
  app.add_option("--images", o.images, "image embedding file (default: the provider file)");
  app.add_option("--embedding-model", o.embedding_model, "model for the http provider");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Persona-conditioned evaluation of language models"};
  app.set_config("--config", "", "TOML config file; stage options go under [group.command] sections");
  app.require_subcommand(1);
  app.fallthrough();
  Cli c;
  add_common(app, c);
  auto& o = c.opt;

  std::function<void()> action;
  auto leaf = [&](CLI::App* group, const std::string& name, const std::string& help, std::function<void()> fn) {
    auto* cmd = group->add_subcommand(name, help);
    cmd->fallthrough();
    cmd->callback([&action, fn] { action = fn; });
    return cmd;
  };

  auto* bandit = app.add_subcommand("bandit", "two-armed bandit experiment")->require_subcommand(1);
  bandit->fallthrough();
  auto* b_run = leaf(bandit, "run", "play bandit games", [&] {
    const auto failed = bandit_run(o);
    std::cout << "bandit run '" << o.run_id << "': " << o.games << " games per cell, " << failed << " failed\n";
  });
  add_bandit(*b_run, o);
  leaf(bandit, "analyze", "fit probit models and write reports", [&] {
    const auto rep = bandit_analyze(o);
    std::cout << "bandit analyze '" << o.run_id << "': " << rep.fits.size() << " fits";
    if (!rep.age_effects_error.empty()) std::cerr << "age analysis skipped: " << rep.age_effects_error << "\n";
    std::cout << "\n";
  });

  auto* mmlu = app.add_subcommand("mmlu", "multiple-choice reasoning experiment")->require_subcommand(1);
  mmlu->fallthrough();
  auto* m_run = leaf(mmlu, "run", "answer MMLU items", [&] {
    const auto n = mmlu_run(o);
    std::cout << "mmlu run '" << o.run_id << "': " << n << " answers\n";
  });
  add_mmlu(*m_run, o);
  leaf(mmlu, "report", "aggregate accuracy by expert category", [&] {
    const auto rep = mmlu_report(o);
    std::cout << "mmlu report '" << o.run_id << "': " << rep.tasks.size() << " tasks\n";
  });

  auto* vis = app.add_subcommand("vision", "zero-shot classification from persona descriptions")
                  ->require_subcommand(1);
  vis->fallthrough();
  auto* v_desc = leaf(vis, "describe", "generate class descriptions", [&] {
    const auto failed = vision_describe(o);
    std::cout << "vision describe '" << o.run_id << "': " << failed << " failed cells\n";
  });
  add_classes(*v_desc, o);
  v_desc->add_option("--seeds", o.seeds, "sampling seeds")->delimiter(',');
  leaf(vis, "scrub", "remove class names from descriptions", [&] {
    const auto kept = vision_scrub(o);
    std::cout << "vision scrub '" << o.run_id << "': " << kept << " sentences kept unchanged\n";
  });
  auto* v_cls = leaf(vis, "classify", "classify images against description embeddings", [&] {
    const auto runs = vision_classify(o);
    double sum = 0;
    for (const auto& r : runs) sum += r.accuracy;
    std::cout << "vision classify '" << o.run_id << "': " << runs.size() << " runs, mean accuracy "
              << report::num(runs.empty() ? 0.0 : sum / static_cast<double>(runs.size())) << "\n";
  });
  add_classes(*v_cls, o);
  add_classify(*v_cls, o);
  auto* v_rep = leaf(vis, "report", "accuracy and bias tables", [&] {
    const auto rows = vision_report(o);
    std::cout << "vision report '" << o.run_id << "': " << rows.size() << " persona pairs\n";
  });
  v_rep->add_option("--pairs", o.pairs, "persona pairs as a/b")->delimiter(',');

  auto* rep = app.add_subcommand("report", "regenerate reports")->require_subcommand(1);
  rep->fallthrough();
  leaf(rep, "all", "every report whose records exist", [&] {
    const auto done = report_all(o);
    std::cout << "report all '" << o.run_id << "': " << text::join(done, ", ") << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return kUsage;
  }

  try {
    o.mode = parse_backend_mode(c.mode);
    o.agent.http.max_in_flight = c.max_in_flight;
    if (!action) throw ConfigError("no command given");
    action();
  } catch (const std::exception& e) {
    std::cerr << "impersona: " << e.what() << "\n";
    return exit_code_of(e);
  }
  return kOk;
}
