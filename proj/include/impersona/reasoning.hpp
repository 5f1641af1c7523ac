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

// Multiple-choice reasoning: prompt layouts, first-token option scoring,
// per-task accuracy and aggregation by expert category.

#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "impersona/agents.hpp"
#include "impersona/parallel.hpp"
#include "impersona/persona.hpp"
#include "impersona/stats.hpp"
#include "impersona/text.hpp"

namespace impersona::reasoning {

inline const std::vector<std::string>& option_letters() {
  static const std::vector<std::string> letters = {"A", "B", "C", "D"};
  return letters;
}

inline constexpr double kRandomBaseline = 0.25;

struct McqItem {
  std::string item_id;
  std::string task_id;
  std::string question;
  std::array<std::string, 4> options;
  int answer_index = 0;

  bool operator==(const McqItem&) const = default;

  void validate() const {
    if (answer_index < 0 || answer_index > 3)
      throw InputError("item '" + item_id + "': answer_index must be in 0..3");
    if (question.empty()) throw InputError("item '" + item_id + "': empty question");
  }
};

enum class PromptStyle { ours, official, chat_suffix };
enum class PredictMode { logit_argmax, chat_parse };

inline std::string_view to_string(PromptStyle s) {
  switch (s) {
    case PromptStyle::ours: return "ours";
    case PromptStyle::official: return "official";
    case PromptStyle::chat_suffix: return "chat_suffix";
  }
  return "ours";
}

inline PromptStyle parse_prompt_style(std::string_view s) {
  for (auto v : {PromptStyle::ours, PromptStyle::official, PromptStyle::chat_suffix})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown prompt style '" + std::string(s) + "'");
}

inline std::string_view to_string(PredictMode m) {
  return m == PredictMode::logit_argmax ? "logit_argmax" : "chat_parse";
}

inline PredictMode parse_predict_mode(std::string_view s) {
  if (s == "logit_argmax") return PredictMode::logit_argmax;
  if (s == "chat_parse") return PredictMode::chat_parse;
  throw ConfigError("unknown prediction mode '" + std::string(s) + "'");
}

namespace detail {
inline std::string question_block(const McqItem& item) {
  std::string s = item.question;
  for (std::size_t i = 0; i < 4; ++i) s += "\n" + option_letters()[i] + ". " + item.options[i];
  return s;
}

inline std::string task_display_name(std::string_view task_id) {
  std::string s(task_id);
  std::replace(s.begin(), s.end(), '_', ' ');
  return s;
}
}  // namespace detail

// Layouts ('\n' separated):
//   ours         Please consider ... A, B, C, and D.
//                Question: <question>
//                A. <option> ... D. <option>
//                <persona clause>, which answer would you choose?
//   chat_suffix  ours + "\nAnswer: The answer is option"
//   official     The following are multiple choice questions (with answers) about <task>.
//                (blank line) <question and options>
//                <persona clause>, which answer would you choose?
//                Answer:
inline std::string build_mcq_prompt(const McqItem& item, const Persona& persona,
                                    const PromptTemplate& tmpl, PromptStyle style,
                                    std::string_view task_name = {}) {
  item.validate();
  const std::string ask = render_prompt(tmpl, persona, ", which answer would you choose?");
  if (style == PromptStyle::official) {
    const std::string name =
        task_name.empty() ? detail::task_display_name(item.task_id) : std::string(task_name);
    return "The following are multiple choice questions (with answers) about " + name + ".\n\n" +
           detail::question_block(item) + "\n" + ask + "\nAnswer:";
  }
  std::string p =
      "Please consider the following multiple-choice question and the four answer options A, B, "
      "C, and D.\nQuestion: " +
      detail::question_block(item) + "\n" + ask;
  if (style == PromptStyle::chat_suffix) p += "\nAnswer: The answer is option";
  return p;
}

struct Prediction {
  std::optional<int> option;  // empty when discarded
  std::optional<CandidateLogProbs> scores;  // logit_argmax only
  int attempts = 1;
};

inline Prediction predict_option(Agent& agent, std::string_view prompt, PredictMode mode,
                                 int max_retries = 10) {
  Prediction p;
  if (mode == PredictMode::logit_argmax) {
    p.scores = agent.candidate_logprobs(prompt, option_letters());
    p.option = static_cast<int>(p.scores->argmax());
    return p;
  }
  const auto outcome = chat_first_option(agent, prompt, option_letters(), max_retries);
  p.attempts = outcome.attempts;
  if (outcome.option) {
    const auto& letters = option_letters();
    p.option = static_cast<int>(std::find(letters.begin(), letters.end(), *outcome.option) -
                                letters.begin());
  }
  return p;
}

// One scored item.
struct McqRecord {
  std::string item_id;
  std::string task_id;
  std::string persona_id;
  std::string template_id;
  std::optional<int> predicted;
  int answer_index = 0;
  int attempts = 1;
  std::optional<CandidateLogProbs> scores;

  bool discarded() const { return !predicted.has_value(); }
  bool correct() const { return predicted && *predicted == answer_index; }
  bool operator==(const McqRecord&) const = default;
};

struct TaskResult {
  std::string task_id;
  std::string persona_id;
  std::string template_id;
  int n_items = 0;
  int n_correct = 0;
  int n_discarded = 0;
  std::optional<double> accuracy;  // empty when every item was discarded

  bool operator==(const TaskResult&) const = default;
};

inline TaskResult summarize(std::span<const McqRecord> records) {
  if (records.empty()) throw InputError("no records to summarize");
  TaskResult r{records[0].task_id, records[0].persona_id, records[0].template_id, 0, 0, 0, {}};
  for (const auto& rec : records) {
    if (rec.task_id != r.task_id || rec.persona_id != r.persona_id ||
        rec.template_id != r.template_id)
      throw InputError("records mix tasks, personas or templates");
    ++r.n_items;
    r.n_discarded += rec.discarded();
    r.n_correct += rec.correct();
  }
  if (r.n_items > r.n_discarded)
    r.accuracy = static_cast<double>(r.n_correct) / (r.n_items - r.n_discarded);
  return r;
}

struct EvaluateOptions {
  PredictMode mode = PredictMode::logit_argmax;
  PromptStyle style = PromptStyle::ours;
  std::string task_name;  // used by the official style
  int max_retries = 10;
  std::size_t parallelism = 1;
};

struct TaskEvaluation {
  TaskResult result;
  std::vector<McqRecord> records;  // in item order
};

inline TaskEvaluation evaluate_task(std::span<const McqItem> items, const Persona& persona,
                                    const PromptTemplate& tmpl, const Agent& agent,
                                    const EvaluateOptions& opt = {}) {
  if (items.empty()) throw InputError("evaluate_task needs at least one item");
  for (const auto& item : items) {
    item.validate();
    if (item.task_id != items[0].task_id) throw InputError("items span several tasks");
  }
  const std::size_t workers = std::min(opt.parallelism, agent.max_in_flight());
  std::vector<std::unique_ptr<Agent>> clones;
  for (std::size_t w = 0; w < std::max<std::size_t>(workers, 1); ++w) clones.push_back(agent.clone());
  TaskEvaluation out;
  out.records.resize(items.size());
  parallel_for(items.size(), workers, [&](std::size_t i, std::size_t w) {
    const auto& item = items[i];
    const auto prompt = build_mcq_prompt(item, persona, tmpl, opt.style, opt.task_name);
    auto pred = predict_option(*clones[w], prompt, opt.mode, opt.max_retries);
    out.records[i] = {item.item_id, item.task_id, persona.id, tmpl.id, pred.option,
                      item.answer_index, pred.attempts, std::move(pred.scores)};
  });
  out.result = summarize(out.records);
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation by expert category

enum class ExpertCategory { task, domain, non_domain, neutral };

inline std::string_view to_string(ExpertCategory c) {
  switch (c) {
    case ExpertCategory::task: return "task";
    case ExpertCategory::domain: return "domain";
    case ExpertCategory::non_domain: return "non_domain";
    case ExpertCategory::neutral: return "neutral";
  }
  return "task";
}

inline const std::vector<ExpertCategory>& all_categories() {
  static const std::vector<ExpertCategory> c = {ExpertCategory::task, ExpertCategory::domain,
                                                ExpertCategory::non_domain,
                                                ExpertCategory::neutral};
  return c;
}

// Mean accuracy with a Student-t 95% interval; the interval is unclipped and
// collapses to the mean when fewer than two values are available.
struct CategoryStat {
  double mean = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::size_t n = 0;
};

inline CategoryStat category_stat(std::span<const double> values) {
  if (values.empty()) throw AggregationError("no values for category");
  CategoryStat s;
  s.n = values.size();
  if (values.size() >= 2) {
    const auto ci = stats::mean_ci95(values);
    s.mean = ci.mean;
    s.ci_lo = ci.lo;
    s.ci_hi = ci.hi;
  } else {
    s.mean = s.ci_lo = s.ci_hi = values[0];
  }
  return s;
}

struct TaskSummary {
  std::string task_id;
  Domain domain = Domain::Other;
  std::map<ExpertCategory, CategoryStat> categories;
};

struct DomainSummary {
  Domain domain = Domain::Other;
  std::size_t n_tasks = 0;
  std::map<ExpertCategory, CategoryStat> categories;  // over per-task means
};

struct CategoryReport {
  std::vector<TaskSummary> tasks;  // taxonomy order
  std::vector<DomainSummary> domains;
  double random_baseline = kRandomBaseline;
};

// For each task with results: the task expert's accuracy, and the mean over
// domain experts, non-domain experts and neutral personas. Each TaskResult
// (one persona under one template) is one sample of its category. Every
// persona of each `required` category must be covered for every task present.
inline CategoryReport aggregate_categories(std::span<const TaskResult> results,
                                           const ExpertTaxonomy& taxonomy,
                                           std::span<const ExpertCategory> required = all_categories()) {
  std::map<std::string, std::map<std::string, std::vector<double>>> by_task;  // task -> persona -> acc
  for (const auto& r : results)
    if (r.accuracy) by_task[r.task_id][r.persona_id].push_back(*r.accuracy);
  if (by_task.empty()) throw AggregationError("no scored results to aggregate");

  CategoryReport report;
  std::vector<std::string> gaps;
  for (const auto& task : taxonomy.tasks) {
    auto it = by_task.find(task.task_id);
    if (it == by_task.end()) continue;
    const auto sets = mmlu_persona_sets(taxonomy, task.task_id);
    const std::map<ExpertCategory, std::vector<Persona>> members = {
        {ExpertCategory::task, {sets.task_expert}},
        {ExpertCategory::domain, sets.domain_experts},
        {ExpertCategory::non_domain, sets.non_domain_experts},
        {ExpertCategory::neutral, sets.neutral}};
    TaskSummary ts{task.task_id, task.domain, {}};
    for (const auto& [cat, personas] : members) {
      std::vector<double> values;
      std::vector<std::string> missing;
      for (const auto& p : personas) {
        auto pit = it->second.find(p.id);
        if (pit == it->second.end()) missing.push_back(p.id);
        else values.insert(values.end(), pit->second.begin(), pit->second.end());
      }
      const bool needed = std::find(required.begin(), required.end(), cat) != required.end();
      if (needed && !missing.empty())
        gaps.push_back(task.task_id + "/" + std::string(to_string(cat)) + ": " +
                       text::join(missing, ", "));
      if (!values.empty() && (missing.empty() || !needed)) ts.categories[cat] = category_stat(values);
    }
    report.tasks.push_back(std::move(ts));
  }
  for (const auto& [task_id, _] : by_task) {
    bool known = false;
    for (const auto& t : taxonomy.tasks) known = known || t.task_id == task_id;
    if (!known) gaps.push_back(task_id + ": not in the taxonomy");
  }
  if (!gaps.empty()) throw AggregationError("missing persona coverage: " + text::join(gaps, "; "));

  for (Domain d : {Domain::STEM, Domain::Humanities, Domain::SocialSciences, Domain::Other}) {
    DomainSummary ds{d, 0, {}};
    std::map<ExpertCategory, std::vector<double>> per_cat;
    for (const auto& ts : report.tasks) {
      if (ts.domain != d) continue;
      ++ds.n_tasks;
      for (const auto& [cat, stat] : ts.categories) per_cat[cat].push_back(stat.mean);
    }
    if (ds.n_tasks == 0) continue;
    for (const auto& [cat, values] : per_cat) ds.categories[cat] = category_stat(values);
    report.domains.push_back(std::move(ds));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Item loading: the standard MMLU CSV layout, one file per task, no header:
//   question,option A,option B,option C,option D,answer letter

inline std::vector<McqItem> parse_mmlu_csv(std::string_view content, const std::string& task_id) {
  std::vector<McqItem> items;
  std::size_t row_no = 0;
  for (const auto& row : text::parse_csv(content)) {
    ++row_no;
    if (row.size() == 1 && text::trim(row[0]).empty()) continue;
    if (row.size() != 6)
      throw InputError(task_id + " row " + std::to_string(row_no) + ": expected 6 fields, got " +
                       std::to_string(row.size()));
    const std::string letter(text::trim(row[5]));
    const auto& letters = option_letters();
    const auto pos = std::find(letters.begin(), letters.end(), letter);
    if (pos == letters.end())
      throw InputError(task_id + " row " + std::to_string(row_no) + ": bad answer '" + letter + "'");
    McqItem item{task_id + ":" + std::to_string(items.size()), task_id, row[0],
                 {row[1], row[2], row[3], row[4]}, static_cast<int>(pos - letters.begin())};
    item.validate();
    items.push_back(std::move(item));
  }
  return items;
}

// Loads every "<task>_<split>.csv" under `dir`, keyed by task id.
inline std::map<std::string, std::vector<McqItem>> load_mmlu_dir(const std::filesystem::path& dir,
                                                                 const std::string& split = "test") {
  if (!std::filesystem::is_directory(dir))
    throw InputError("MMLU directory '" + dir.string() + "' not found");
  const std::string suffix = "_" + split + ".csv";
  std::map<std::string, std::vector<McqItem>> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (!entry.is_regular_file() || !name.ends_with(suffix)) continue;
    const std::string task_id = name.substr(0, name.size() - suffix.size());
    out[task_id] = parse_mmlu_csv(text::read_file(entry.path().string()), task_id);
  }
  if (out.empty()) throw InputError("no '*" + suffix + "' files in '" + dir.string() + "'");
  return out;
}

}  // namespace impersona::reasoning
