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

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Usage: impersona_acceptance [AC1 AC2 ...]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include "impersona/pipeline.hpp"

namespace fs = std::filesystem;
using namespace impersona;

namespace {

const std::string kRoot = IMPERSONA_SOURCE_DIR;

// Tolerances and runtime budgets (seconds).
constexpr double kKalmanTol = 1e-6;
constexpr double kGradRelTol = 1e-6;
constexpr double kBetaTol = 0.05;
constexpr double kLogLikRelTol = 1e-12;
constexpr double kSigmas = 3.0;
constexpr double kSignificance = 0.05;  // two-sided level for "not significant"
constexpr double kMcqBand = 0.041;
constexpr double kChiTol = 1e-3;
constexpr double kChiPTol = 1e-4;
constexpr double kHalfWidthRel = 0.10;
constexpr double kBudget[] = {0, 10, 30, 120, 60, 10, 5, 10, 10, 20, 120};

struct Outcome {
  bool pass = true;
  std::string detail;
  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += (ok ? "" : "FAILED ") + what;
  }
};

std::string g(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------------------
// AC1: conjugate update against a brute-force grid posterior

std::pair<double, double> grid_posterior(double m, double v, double r, double rv) {
  const int n = 4001;
  const double half = 9.0 * std::sqrt(v);
  const double h = 2.0 * half / (n - 1);
  double z = 0, s1 = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double th = m - half + i * h;
    const double w = (i == 0 || i == n - 1 ? 0.5 : 1.0) *
                     std::exp(-0.5 * (th - m) * (th - m) / v - 0.5 * (r - th) * (r - th) / rv);
    z += w;
    s1 += w * th;
    s2 += w * th * th;
  }
  const double mean = s1 / z;
  return {mean, s2 / z - mean * mean};
}

Outcome ac1() {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> pv(0.1, 20.0), rv(0.1, 5.0), mu(-10, 10), u(-3, 3);
  double worst_m = 0, worst_v = 0;
  for (int k = 0; k < 1000; ++k) {
    stats::PosteriorState s{{mu(rng), mu(rng)}, {pv(rng), pv(rng)}};
    const double noise = rv(rng);
    const int arm = 1 + static_cast<int>(rng() % 2);
    const auto i = static_cast<std::size_t>(arm - 1);
    const double r = s.mean[i] + u(rng) * std::sqrt(s.variance[i] + noise);
    const auto next = stats::kalman_update(s, arm, r, noise);
    const auto [gm, gv] = grid_posterior(s.mean[i], s.variance[i], r, noise);
    worst_m = std::max(worst_m, std::abs(next.mean[i] - gm));
    worst_v = std::max(worst_v, std::abs(next.variance[i] - gv));
  }
  Outcome o;
  o.require(worst_m <= kKalmanTol && worst_v <= kKalmanTol,
            "1000 cases, max |d mean| " + g(worst_m) + ", max |d var| " + g(worst_v) + " (tol 1e-6)");
  return o;
}

// ---------------------------------------------------------------------------
// AC2: probit likelihood, gradient and recovery

std::vector<stats::ProbitFeatures> simulate_probit(std::size_t n, double b1, double b2, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0, 1);
  std::vector<stats::ProbitFeatures> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = 2.0 * z(rng), ru = z(rng);
    out.push_back({v, ru, b1 * v + b2 * ru + z(rng) > 0});
  }
  return out;
}

Outcome ac2() {
  Outcome o;
  const auto small = simulate_probit(500, 0.5, 0.3, 7);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-2, 2);
  double worst = 0;
  for (int k = 0; k < 100; ++k) {
    Eigen::VectorXd b(2);
    b << u(rng), u(rng);
    const auto grad = stats::probit_gradient(small, b);
    for (int i = 0; i < 2; ++i) {
      const double h = 1e-5 * std::max(1.0, std::abs(b(i)));
      Eigen::VectorXd hi = b, lo = b;
      hi(i) += h;
      lo(i) -= h;
      const double fd =
          (stats::probit_log_likelihood(small, hi) - stats::probit_log_likelihood(small, lo)) / (2 * h);
      worst = std::max(worst, std::abs(grad(i) - fd) / std::max(1.0, std::abs(grad(i))));
    }
  }
  o.require(worst <= kGradRelTol, "gradient vs central differences at 100 points, max rel err " + g(worst));

  const auto data = simulate_probit(10000, 0.5, 0.3, 9);
  const auto fit = stats::fit_probit(data);
  o.require(fit.converged && std::abs(fit.b1() - 0.5) <= kBetaTol && std::abs(fit.b2() - 0.3) <= kBetaTol,
            "n=10000 fit (" + g(fit.b1()) + ", " + g(fit.b2()) + ") vs (0.5, 0.3) +-0.05");

  const double ll0 = stats::probit_log_likelihood(data, Eigen::VectorXd::Zero(2));
  const double expect = static_cast<double>(data.size()) * std::log(0.5);
  const double rel = std::abs(ll0 - expect) / std::abs(expect);
  o.require(rel <= kLogLikRelTol, "ll(0) = n ln 0.5, rel err " + g(rel));
  return o;
}

// ---------------------------------------------------------------------------
// AC3: exploration signatures of synthetic players

stats::ProbitFit fit_agent(const Agent& agent, const Persona& persona, int games, std::uint64_t seed) {
  BanditConfig cfg;
  cfg.n_games = games;
  cfg.master_seed = seed;
  const auto run = bandit::run_games(cfg, persona, builtin_templates()[0], agent, 8);
  std::vector<stats::ProbitFeatures> data;
  for (const auto& game : run.games) {
    const auto f = stats::probit_features(game, cfg);
    data.insert(data.end(), f.begin(), f.end());
  }
  return stats::fit_probit(data);
}

Outcome ac3() {
  Outcome o;
  const double z_crit = 1.959963984540054;  // two-sided 5%
  const auto greedy = fit_agent(GreedyBanditAgent(3.0), age_persona(20), 2000, 1);
  const double z1 = greedy.b1() / greedy.se1(), z2 = greedy.b2() / greedy.se2();
  o.require(z1 > kSigmas, "greedy(delta=3) b1 " + g(greedy.b1()) + " (z " + g(z1) + ") > 0 at 3 sigma");
  o.require(std::abs(z2) < z_crit, "greedy |b2| not significant at " + g(kSignificance) + ": b2 " +
                                       g(greedy.b2()) + " (z " + g(z2) + ")");

  const auto unc = fit_agent(UncertaintyAgent(1.0), age_persona(20), 2000, 2);
  const double zu = unc.b2() / unc.se2();
  o.require(zu > kSigmas, "uncertainty(gamma=1) b2 " + g(unc.b2()) + " (z " + g(zu) + ") > 0 at 3 sigma");

  std::vector<std::pair<int, stats::ProbitFit>> fits;
  for (int age = 2; age <= 20; age += 2)
    fits.emplace_back(age, fit_agent(UncertaintyAgent(2.0 - age / 10.0), age_persona(age), 2000, 3));
  const auto eff = stats::age_effect_analysis(fits, {2, 20});
  const auto& reg = eff.exploration;
  const double slope = reg.coefficients[1], t = reg.t_stats[1];
  o.require(slope < 0 && t < -kSigmas,
            "gamma = 2 - age/10 over ages 2..20: b2-vs-age slope " + g(slope) + " (t " + g(t) + ") < 0 at 3 sigma");
  return o;
}

// ---------------------------------------------------------------------------
// AC4: environment statistics over 100k games

Outcome ac4() {
  Outcome o;
  BanditConfig cfg;
  cfg.n_games = 100000;
  cfg.master_seed = 4;
  const auto run = bandit::run_games(cfg, age_persona(20), builtin_templates()[0], RandomAgent(4), 8);
  double s = 0, ss = 0, rs = 0, rss = 0;
  std::size_t n_arm = 0, n_noise = 0;
  std::vector<double> per_game;
  for (const auto& game : run.games) {
    for (double m : game.arm_means) {
      s += m;
      ss += m * m;
      ++n_arm;
    }
    double total = 0;
    for (const auto& t : game.trials) {
      const double e = t.reward - game.arm_means[t.action - 1];
      rs += e;
      rss += e * e;
      ++n_noise;
      total += t.reward;
    }
    per_game.push_back(total / cfg.n_trials);
  }
  auto sample_var = [](double sum, double sumsq, double n) { return (sumsq - sum * sum / n) / (n - 1); };
  const double arm_var = sample_var(s, ss, n_arm);
  const double arm_se = cfg.prior_variance * std::sqrt(2.0 / (n_arm - 1));
  o.require(std::abs(arm_var - cfg.prior_variance) <= kSigmas * arm_se,
            "arm-mean variance " + g(arm_var, 6) + " vs 10 (3 SE = " + g(kSigmas * arm_se) + ")");
  const double noise_var = sample_var(rs, rss, n_noise);
  const double noise_se = cfg.reward_variance * std::sqrt(2.0 / (n_noise - 1));
  o.require(std::abs(noise_var - cfg.reward_variance) <= kSigmas * noise_se,
            "reward-noise variance " + g(noise_var, 6) + " vs 1 (3 SE = " + g(kSigmas * noise_se) + ")");
  const auto ci = stats::mean_ci95(per_game);
  const double se = ci.half_width() / 1.959963984540054;
  o.require(std::abs(ci.mean) <= kSigmas * se,
            "random-play mean reward " + g(ci.mean) + " (3 SE = " + g(kSigmas * se) + ")");
  o.require(run.n_failed == 0, std::to_string(run.games.size()) + " games, " + std::to_string(run.n_failed) +
                                   " failed");
  return o;
}

// ---------------------------------------------------------------------------
// AC5: multiple-choice scoring

std::vector<reasoning::McqItem> balanced_items(int n) {
  std::vector<reasoning::McqItem> items;
  for (int i = 0; i < n; ++i)
    items.push_back({"abstract_algebra:" + std::to_string(i), "abstract_algebra",
                     "Which option is listed at position " + std::to_string(i) + "?",
                     {"first " + std::to_string(i), "second", "third", "fourth"}, i % 4});
  return items;
}

Outcome ac5() {
  Outcome o;
  const auto items = balanced_items(1000);
  const auto persona = neutral_persona("student");
  const auto& tmpl = builtin_templates()[0];
  const RandomAgent random(5);
  const auto r = reasoning::evaluate_task(items, persona, tmpl, random).result;
  const double acc = r.accuracy.value_or(-1);
  o.require(std::abs(acc - 0.25) <= kMcqBand, "random accuracy " + g(acc) + " within 0.25 +- 0.041");

  std::map<std::string, std::vector<reasoning::McqItem>> tasks = {{"abstract_algebra", items}};
  const auto oracle = pipeline::mcq_oracle(tasks);
  const auto t = reasoning::evaluate_task(items, persona, tmpl, oracle).result;
  o.require(t.accuracy == 1.0, "ground-truth agent accuracy " + g(t.accuracy.value_or(-1)));

  const auto tied = ScriptedAgent::uniform();
  const auto first = reasoning::evaluate_task(items, persona, tmpl, tied);
  const auto first_random = reasoning::evaluate_task(items, persona, tmpl, random);
  int same = 0;
  for (int k = 0; k < 100; ++k) {
    reasoning::EvaluateOptions opt;
    opt.parallelism = 1 + k % 8;
    const auto again = reasoning::evaluate_task(items, persona, tmpl, tied, opt);
    const auto again_random = reasoning::evaluate_task(items, persona, tmpl, random, opt);
    same += again.records == first.records && again_random.records == first_random.records;
  }
  o.require(same == 100, std::to_string(same) + "/100 repeated runs identical (tied and random agents)");
  return o;
}

// ---------------------------------------------------------------------------
// AC6: expert-category aggregation

Outcome ac6() {
  Outcome o;
  const auto& tax = mmlu_taxonomy();
  const int n_templates = static_cast<int>(builtin_templates().size());
  // Constructed fixture: the task expert scores 0.9, everyone else 0.25. A
  // second copy adds a +-0.05 template jitter so intervals are non-trivial.
  std::vector<reasoning::TaskResult> flat, jitter;
  for (const auto& task : tax.tasks) {
    const auto sets = mmlu_persona_sets(tax, task.task_id);
    auto add = [&](const Persona& p, double acc) {
      for (int k = 0; k < n_templates; ++k) {
        flat.push_back({task.task_id, p.id, builtin_templates()[k].id, 100, 0, 0, acc});
        jitter.push_back({task.task_id, p.id, builtin_templates()[k].id, 100, 0, 0, acc + (k % 2 ? 0.05 : -0.05)});
      }
    };
    add(sets.task_expert, 0.9);
    for (const auto* group : {&sets.domain_experts, &sets.non_domain_experts, &sets.neutral})
      for (const auto& p : *group) add(p, 0.25);
  }
  using C = reasoning::ExpertCategory;
  const auto rep = reasoning::aggregate_categories(flat, tax);
  const auto rj = reasoning::aggregate_categories(jitter, tax);
  int ordered = 0, collapsed = 0, ci_ok = 0;
  double worst = 0;
  for (std::size_t i = 0; i < rep.tasks.size(); ++i) {
    const auto& c = rep.tasks[i].categories;
    const auto& task = c.at(C::task), &dom = c.at(C::domain), &non = c.at(C::non_domain);
    ordered += task.mean > dom.mean && dom.mean == non.mean && task.mean == 0.9 && dom.mean == 0.25;
    bool zero = true;
    for (const auto& [_, s] : c) zero = zero && s.ci_lo == s.mean && s.ci_hi == s.mean;
    collapsed += zero;
    // Jittered copy: half the values at m-0.05 and half at m+0.05 (n even),
    // so sd = 0.05 * sqrt(n / (n - 1)).
    bool ok = true;
    for (const auto& [cat, s] : rj.tasks[i].categories) {
      const double n = static_cast<double>(s.n);
      const double m = cat == C::task ? 0.9 : 0.25;
      const double hw = boost::math::quantile(boost::math::complement(boost::math::students_t(n - 1), 0.025)) *
                        0.05 * std::sqrt(n / (n - 1)) / std::sqrt(n);
      const double err = std::max({std::abs(s.mean - m), std::abs(s.ci_lo - (m - hw)), std::abs(s.ci_hi - (m + hw))});
      worst = std::max(worst, err);
      ok = ok && err < 1e-12;
    }
    ci_ok += ok;
  }
  const auto n_tasks = static_cast<int>(tax.tasks.size());
  o.require(static_cast<int>(rep.tasks.size()) == 57 && ordered == n_tasks,
            "task > domain = non-domain in " + std::to_string(ordered) + "/" + std::to_string(n_tasks) + " tasks");
  o.require(collapsed == n_tasks && ci_ok == n_tasks,
            "CIs: zero-spread collapse " + std::to_string(collapsed) + "/57, jittered t-interval " +
                std::to_string(ci_ok) + "/57 (max err " + g(worst) + ")");

  int partitions = 0;
  for (const auto& task : tax.tasks) {
    const auto sets = mmlu_persona_sets(tax, task.task_id);
    std::multiset<std::string> ids = {sets.task_expert.id};
    bool domains_right = true;
    for (const auto& p : sets.domain_experts) {
      ids.insert(p.id);
      domains_right = domains_right && tax.task(p.id.substr(7)).domain == task.domain;
    }
    for (const auto& p : sets.non_domain_experts) {
      ids.insert(p.id);
      domains_right = domains_right && tax.task(p.id.substr(7)).domain != task.domain;
    }
    std::multiset<std::string> all;
    for (const auto& t : tax.tasks) all.insert("expert:" + t.task_id);
    partitions += ids == all && domains_right && sets.task_expert.id == "expert:" + task.task_id;
  }
  o.require(partitions == 57, "expert-set partition holds for " + std::to_string(partitions) + "/57 tasks");
  return o;
}

// ---------------------------------------------------------------------------
// AC7: scrubber guarantee with replayed rewrites

bool name_oracle(const std::string& text, const std::string& name) {
  std::string escaped;
  for (char c : name) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != ' ') escaped += '\\';
    escaped += c;
  }
  const std::regex re("(^|[^A-Za-z0-9])" + escaped + "(s|es)?([^A-Za-z0-9]|$)", std::regex::icase);
  std::string alt;
  if (!name.empty() && (name.back() == 'y' || name.back() == 'Y')) alt = name.substr(0, name.size() - 1) + "ies";
  return std::regex_search(text, re) || (!alt.empty() && text::contains_icase(text, alt));
}

std::vector<std::pair<std::string, std::string>> scrub_corpus(std::size_t n, std::uint64_t seed) {
  std::vector<std::string> names;
  for (const auto* list : {"cub", "stanford_cars", "fgvc_aircraft", "oxford_flowers"})
    for (const auto& c : vision::load_dataset(kRoot + "/data/classes/" + list + ".txt").classes)
      names.push_back(c.class_name);
  const std::vector<std::string> frames = {
      "{A} {N} is a small and lively thing.", "{N}'s color is striking.", "Many people admire the {N}.",
      "You can spot {a} {N} near water.", "{P} are common in spring.",
      "Experts say {N} looks unusual, e.g. in flight.", "It is often called {N} by locals.",
      "Its shape is easy to remember.", "{P}' habits vary by season.", "Some compare it to the {N} of old photos."};
  std::mt19937_64 rng(seed);
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& name = names[rng() % names.size()];
    std::string text = "It is";
    const int k = 2 + static_cast<int>(rng() % 4);
    for (int s = 0; s < k; ++s) {
      std::string f = frames[rng() % frames.size()];
      auto sub = [&](const std::string& key, const std::string& v) {
        for (auto pos = f.find(key); pos != std::string::npos; pos = f.find(key)) f.replace(pos, key.size(), v);
      };
      const std::string article(vision::indefinite_article(name));
      sub("{A}", std::string(1, static_cast<char>(std::toupper(article[0]))) + article.substr(1));
      sub("{a}", article);
      sub("{N}", name);
      sub("{P}", vision::plural_of(name));
      f[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(f[0])));
      text += (s == 0 ? " a thing. " : " ") + f;
    }
    out.emplace_back(name, text);
  }
  return out;
}

// Rewriter used while recording: replaces the name with "this one", except
// for every fifth sentence (by hash), which it echoes back unchanged.
ScriptedAgent recording_rewriter() {
  return ScriptedAgent(
      [](std::string_view prompt, std::size_t) {
        const std::string p(prompt);
        const auto name_at = p.rfind("Name: ");
        const auto sent_at = p.rfind("Sentence: ");
        const auto name = p.substr(name_at + 6, p.find('\n', name_at) - name_at - 6);
        auto sentence = p.substr(sent_at + 10, p.find('\n', sent_at) - sent_at - 10);
        if (std::hash<std::string>{}(sentence) % 5 == 0) return " " + sentence;
        for (const auto& form : {vision::plural_of(name), name})
          for (auto pos = text::find_icase(sentence, form); pos != std::string::npos;
               pos = text::find_icase(sentence, form))
            sentence.replace(pos, form.size(), "this one");
        return " " + sentence;
      },
      nullptr, "synthetic:rewriter");
}

Outcome ac7() {
  Outcome o;
  const auto corpus = scrub_corpus(500, 2026);
  const auto fixture = fs::temp_directory_path() / "impersona_acceptance_scrub.jsonl";
  fs::remove(fixture);
  {
    auto cache = std::make_shared<ReplayCache>(fixture);
    CachingAgent rec(std::make_unique<ScriptedAgent>(recording_rewriter()), cache, BackendMode::record);
    for (const auto& [name, raw] : corpus) vision::scrub_description(raw, name, rec);
  }
  auto cache = std::make_shared<ReplayCache>(fixture, false);
  CachingAgent replay(std::make_unique<ScriptedAgent>(ScriptedAgent({}, {}, "synthetic:rewriter")), cache,
                      BackendMode::replay_strict);
  int leaks = 0, kept = 0, llm = 0, heuristic = 0, split_mismatch = 0, not_idempotent = 0;
  for (const auto& [name, raw] : corpus) {
    const auto r = vision::scrub_description(raw, name, replay);
    std::set<int> kept_idx;
    for (const auto& e : r.log) {
      if (e.action == vision::ScrubAction::kept_original) kept_idx.insert(e.sentence_index);
      kept += e.action == vision::ScrubAction::kept_original;
      llm += e.action == vision::ScrubAction::llm;
      heuristic += e.action == vision::ScrubAction::heuristic;
    }
    const std::vector<std::string> guard = {name, vision::plural_of(name)};
    const auto spans = vision::split_sentences(r.text, guard);
    if (spans.size() != vision::split_sentences(raw, guard).size()) {
      ++split_mismatch;
      leaks += kept_idx.empty() && name_oracle(r.text, name);
      continue;
    }
    for (std::size_t k = 0; k < spans.size(); ++k)
      if (!kept_idx.count(static_cast<int>(k)) &&
          name_oracle(r.text.substr(spans[k].begin, spans[k].end - spans[k].begin), name))
        ++leaks;
    const auto once = vision::scrub_heuristic(raw, name);
    not_idempotent += vision::scrub_heuristic(once, name) != once;
  }
  fs::remove(fixture);
  o.require(leaks == 0, "500 descriptions, " + std::to_string(leaks) + " unlogged name mentions (" +
                            std::to_string(heuristic) + " heuristic, " + std::to_string(llm) + " llm, " +
                            std::to_string(kept) + " kept_original)");
  o.require(split_mismatch == 0, std::to_string(split_mismatch) + " sentence-count mismatches");
  o.require(kept > 0 && llm > 0, "replayed rewrites exercise both llm and kept_original");
  o.require(not_idempotent == 0, "heuristic step idempotent on " + std::to_string(500 - not_idempotent) + "/500");
  return o;
}

// ---------------------------------------------------------------------------
// AC8: zero-shot classifier

vision::EmbeddingVector random_unit(std::mt19937_64& rng, std::size_t dims) {
  std::normal_distribution<double> z;
  vision::EmbeddingVector v;
  for (std::size_t k = 0; k < dims; ++k) v.values.push_back(z(rng));
  return vision::normalize(v);
}

int oracle_argmax(const vision::EmbeddingVector& img, const std::vector<vision::EmbeddingVector>& classes,
                  double* gap) {
  std::vector<double> cos;
  for (const auto& c : classes) {
    double dot = 0, ni = 0, nc = 0;
    for (std::size_t k = 0; k < c.values.size(); ++k) {
      dot += img.values[k] * c.values[k];
      ni += img.values[k] * img.values[k];
      nc += c.values[k] * c.values[k];
    }
    cos.push_back(dot / std::sqrt(ni * nc));
  }
  int best = 0;
  for (int c = 1; c < static_cast<int>(cos.size()); ++c)
    if (cos[c] > cos[best]) best = c;
  *gap = INFINITY;
  for (int c = 0; c < static_cast<int>(cos.size()); ++c)
    if (c != best) *gap = std::min(*gap, cos[best] - cos[c]);
  return best;
}

Outcome ac8() {
  Outcome o;
  std::mt19937_64 rng(808);
  const std::size_t dims = 64;
  std::vector<std::string> names;
  for (int c = 0; c < 50; ++c) names.push_back("class " + std::to_string(c));
  const auto d = vision::make_dataset("random", names);
  std::vector<vision::EmbeddingVector> classes;
  for (int c = 0; c < 50; ++c) classes.push_back(random_unit(rng, dims));
  std::vector<vision::LabeledImage> images;
  for (int i = 0; i < 500; ++i) images.push_back({std::to_string(i), rng() % 50, random_unit(rng, dims)});
  std::vector<std::size_t> pred;
  const auto run = vision::classify_zero_shot(images, classes, d, &pred);
  int match = 0, correct = 0;
  double min_gap = INFINITY;
  for (std::size_t i = 0; i < images.size(); ++i) {
    double gap;
    const int b = oracle_argmax(images[i].embedding, classes, &gap);
    min_gap = std::min(min_gap, gap);
    match += b == static_cast<int>(pred[i]);
    correct += b == static_cast<int>(images[i].true_class);
  }
  o.require(min_gap > 1e-9, "tie-free fixture (min cosine gap " + g(min_gap) + ")");
  o.require(match == 500 && run.n_correct == correct,
            "50 classes x 500 images, " + std::to_string(match) + "/500 match brute-force argmax");

  std::normal_distribution<double> z;
  int invariant = 0;
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd m(dims, dims);
    for (std::size_t i = 0; i < dims; ++i)
      for (std::size_t j = 0; j < dims; ++j) m(i, j) = z(rng);
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(m).householderQ();
    auto rotate = [&](const vision::EmbeddingVector& v) {
      const Eigen::VectorXd r = q * Eigen::Map<const Eigen::VectorXd>(v.values.data(), dims);
      return vision::EmbeddingVector{{r.data(), r.data() + dims}, true};
    };
    std::vector<vision::EmbeddingVector> rc;
    for (const auto& c : classes) rc.push_back(rotate(c));
    std::vector<vision::LabeledImage> ri;
    for (const auto& im : images) ri.push_back({im.item_id, im.true_class, rotate(im.embedding)});
    std::vector<std::size_t> rp;
    vision::classify_zero_shot(ri, rc, d, &rp);
    invariant += rp == pred;
  }
  o.require(invariant == 5, "predictions unchanged under " + std::to_string(invariant) + "/5 random rotations");
  return o;
}

// ---------------------------------------------------------------------------
// AC9: statistics

Outcome ac9() {
  Outcome o;
  const auto chi = stats::chi_square_test({{{20, 10}, {10, 20}}});
  o.require(std::abs(chi.statistic - 6.667) <= kChiTol && std::abs(chi.p_value - 0.0098) <= kChiPTol,
            "chi2 " + g(chi.statistic, 6) + ", p " + g(chi.p_value, 6) + " (want 6.667 +-1e-3, 0.0098 +-1e-4)");

  std::mt19937_64 rng(909);
  std::normal_distribution<double> z(0, 1);
  std::vector<double> draws(10000);
  for (auto& x : draws) x = z(rng);
  const double hw = stats::mean_ci95(draws).half_width();
  o.require(std::abs(hw - 0.0196) <= kHalfWidthRel * 0.0196, "CI half-width " + g(hw) + " vs 0.0196 +-10%");

  const Eigen::Index n = 20000;
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  const double noise_sd = std::sqrt(1.0 - 0.6 * 0.6 - 0.17 * 0.17);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = z(rng);
    X(i, 1) = z(rng);
    y(i) = 0.6 * X(i, 0) + 0.17 * X(i, 1) + noise_sd * z(rng);
  }
  const auto reg = stats::fit_ols(X, y, true, {"trial", "age"});
  const double e1 = std::abs(reg.coefficients[1] - 0.6) / reg.std_errors[1];
  const double e2 = std::abs(reg.coefficients[2] - 0.17) / reg.std_errors[2];
  o.require(e1 <= kSigmas && e2 <= kSigmas, "planted standardized OLS (" + g(reg.coefficients[1]) + ", " +
                                                g(reg.coefficients[2]) + ") within " + g(std::max(e1, e2), 3) +
                                                " SE of (0.6, 0.17)");
  return o;
}

// ---------------------------------------------------------------------------
// AC10: record then replay yields identical records and reports

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void run_everything(pipeline::Options o) {
  o.agent.kind = "uncertainty";
  o.games = 200;
  pipeline::bandit_run(o);
  pipeline::bandit_analyze(o);
  o.agent.kind = "random";
  o.personas = {};
  pipeline::mmlu_run(o);
  pipeline::mmlu_report(o);
  o.agent.kind = "scripted";
  pipeline::vision_describe(o);
  pipeline::vision_scrub(o);
  pipeline::vision_classify(o);
  pipeline::vision_report(o);
}

Outcome ac10() {
  Outcome o;
  const auto dir = fs::temp_directory_path() / "impersona_acceptance_e2e";
  fs::remove_all(dir);
  pipeline::Options opt;
  opt.runs_dir = dir / "runs";
  opt.fixtures = dir / "fixtures.jsonl";
  opt.mmlu_dir = kRoot + "/fixtures/mmlu";
  opt.classes = kRoot + "/fixtures/toy.txt";
  opt.provider = "file:" + kRoot + "/fixtures/toy.emb";
  opt.parallelism = 4;
  opt.seed = 10;
  opt.run_id = "recorded";
  opt.mode = BackendMode::record;
  run_everything(opt);
  opt.run_id = "replayed";
  opt.mode = BackendMode::replay_strict;
  run_everything(opt);

  int compared = 0, differ = 0;
  std::string first_diff;
  for (const auto& entry : fs::recursive_directory_iterator(dir / "runs/recorded")) {
    if (!entry.is_regular_file() || entry.path().filename() == "manifest.json") continue;
    const auto rel = fs::relative(entry.path(), dir / "runs/recorded");
    ++compared;
    if (slurp(entry.path()) != slurp(dir / "runs/replayed" / rel)) {
      ++differ;
      if (first_diff.empty()) first_diff = rel.string();
    }
  }
  std::size_t replayed_files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dir / "runs/replayed"))
    replayed_files += entry.is_regular_file() && entry.path().filename() != "manifest.json";
  fs::remove_all(dir);
  o.require(compared >= 15 && differ == 0 && replayed_files == static_cast<std::size_t>(compared),
            "bandit, mmlu and vision stages: " + std::to_string(compared - differ) + "/" +
                std::to_string(compared) + " JSONL and report files bit-identical" +
                (first_diff.empty() ? "" : " (first difference: " + first_diff + ")"));
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks = {
      {"AC1", ac1}, {"AC2", ac2}, {"AC3", ac3}, {"AC4", ac4}, {"AC5", ac5},
      {"AC6", ac6}, {"AC7", ac7}, {"AC8", ac8}, {"AC9", ac9}, {"AC10", ac10}};
  std::set<std::string> only(argv + 1, argv + argc);
  int failed = 0;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    const auto& [id, fn] = checks[i];
    if (!only.empty() && !only.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = fn();
    } catch (const std::exception& e) {
      out.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.require(secs <= kBudget[i + 1], "runtime " + g(secs, 3) + " s (budget " + g(kBudget[i + 1]) + " s)");
    std::cout << id << " " << (out.pass ? "PASS" : "FAIL") << "  " << out.detail << std::endl;
    failed += !out.pass;
  }
  return failed == 0 ? 0 : 1;
}
