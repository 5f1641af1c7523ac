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

// Personas, impersonation prompt templates and the MMLU expert taxonomy.

#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "impersona/errors.hpp"
#include "impersona/text.hpp"

namespace impersona {

enum class PersonaCategory { age, expertise, race, gender, neutral, composed };

inline std::string_view to_string(PersonaCategory c) {
  switch (c) {
    case PersonaCategory::age: return "age";
    case PersonaCategory::expertise: return "expertise";
    case PersonaCategory::race: return "race";
    case PersonaCategory::gender: return "gender";
    case PersonaCategory::neutral: return "neutral";
    case PersonaCategory::composed: return "composed";
  }
  return "neutral";
}

inline PersonaCategory parse_persona_category(std::string_view s) {
  static constexpr std::array<PersonaCategory, 6> all = {
      PersonaCategory::age,     PersonaCategory::expertise,
      PersonaCategory::race,    PersonaCategory::gender,
      PersonaCategory::neutral, PersonaCategory::composed};
  for (auto c : all)
    if (to_string(c) == s) return c;
  throw InputError("unknown persona category '" + std::string(s) + "'");
}

struct Persona {
  std::string id;
  std::string display_text;  // substituted verbatim for "{persona}"
  PersonaCategory category = PersonaCategory::neutral;
  std::optional<int> age_years;  // present iff category == age

  bool operator==(const Persona&) const = default;

  void validate() const {
    if (id.empty()) throw InputError("persona id is empty");
    if (display_text.empty())
      throw InputError("persona '" + id + "' has empty display text");
    if (display_text.find_first_of("{}") != std::string::npos)
      throw InputError("persona '" + id + "' display text contains braces");
    if ((category == PersonaCategory::age) != age_years.has_value())
      throw InputError("persona '" + id +
                       "': age_years must be set exactly for age personas");
    if (age_years && *age_years <= 0)
      throw InputError("persona '" + id + "': age must be positive");
  }
};

inline Persona make_persona(std::string id, std::string display_text,
                            PersonaCategory category,
                            std::optional<int> age = std::nullopt) {
  Persona p{std::move(id), std::move(display_text), category, age};
  p.validate();
  return p;
}

inline Persona age_persona(int years) {
  return make_persona("age:" + std::to_string(years),
                      std::to_string(years) + "-year-old",
                      PersonaCategory::age, years);
}

// Composes personas into one role, e.g. {black person, woman} -> "black
// female". Race modifiers come first, then gender, then everything else.
inline Persona compose_personas(const std::vector<Persona>& parts) {
  if (parts.size() < 2) throw InputError("composition needs at least two personas");
  auto rank = [](PersonaCategory c) {
    switch (c) {
      case PersonaCategory::race: return 0;
      case PersonaCategory::gender: return 1;
      case PersonaCategory::age: return 2;
      case PersonaCategory::neutral: return 3;
      case PersonaCategory::expertise: return 4;
      case PersonaCategory::composed: return 5;
    }
    return 5;
  };
  auto modifier = [](const Persona& p) -> std::string {
    if (p.category == PersonaCategory::gender) {
      if (p.display_text == "man") return "male";
      if (p.display_text == "woman") return "female";
    }
    if (p.category == PersonaCategory::race || p.category == PersonaCategory::gender) {
      constexpr std::string_view suffix = " person";
      std::string_view d = p.display_text;
      if (d.size() > suffix.size() && d.ends_with(suffix))
        return std::string(d.substr(0, d.size() - suffix.size()));
    }
    return p.display_text;
  };
  std::vector<const Persona*> sorted;
  for (const auto& p : parts) sorted.push_back(&p);
  std::stable_sort(sorted.begin(), sorted.end(), [&](auto* a, auto* b) {
    return rank(a->category) < rank(b->category);
  });
  std::string id = "composed:";
  std::string text;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i) {
      id += '+';
      text += ' ';
    }
    id += sorted[i]->id;
    text += modifier(*sorted[i]);
  }
  return make_persona(std::move(id), std::move(text), PersonaCategory::composed);
}

// ---------------------------------------------------------------------------
// Prompt templates

inline constexpr std::string_view kPersonaSlot = "{persona}";

struct PromptTemplate {
  std::string id;
  std::string pattern;

  bool operator==(const PromptTemplate&) const = default;

  void validate() const {
    std::size_t count = 0;
    for (auto pos = pattern.find(kPersonaSlot); pos != std::string::npos;
         pos = pattern.find(kPersonaSlot, pos + kPersonaSlot.size()))
      ++count;
    if (count == 0)
      throw TemplateError("template '" + id + "' has no {persona} placeholder");
    if (count > 1)
      throw TemplateError("template '" + id + "' has " + std::to_string(count) +
                          " {persona} placeholders");
  }
};

inline PromptTemplate make_template(std::string id, std::string pattern) {
  PromptTemplate t{std::move(id), std::move(pattern)};
  t.validate();
  return t;
}

inline std::string render_prompt(const PromptTemplate& tmpl, const Persona& persona,
                                 std::string_view body = {}) {
  tmpl.validate();
  if (persona.display_text.find_first_of("{}") != std::string::npos)
    throw TemplateError("persona text would leave placeholder braces");
  std::string out = tmpl.pattern;
  out.replace(out.find(kPersonaSlot), kPersonaSlot.size(), persona.display_text);
  out.append(body);
  return out;
}

// The original impersonation instruction followed by its five meta-prompted
// rewrites, in the order they were used for the experiments.
inline const std::vector<PromptTemplate>& builtin_templates() {
  static const std::vector<PromptTemplate> templates = {
      {"original", "If you were a {persona}"},
      {"transformed", "Should you be transformed into a {persona}"},
      {"imagine", "Imagine you are a {persona}"},
      {"assume_role", "Should you assume the role of a {persona}"},
      {"take_on", "Were you to take on the persona of a {persona}"},
      {"case_of", "In the case of you being a {persona}"},
  };
  return templates;
}

inline const PromptTemplate& find_template(std::string_view id) {
  for (const auto& t : builtin_templates())
    if (t.id == id) return t;
  throw LookupError("unknown template '" + std::string(id) + "'");
}

// ---------------------------------------------------------------------------
// MMLU expert taxonomy

enum class Domain { STEM, Humanities, SocialSciences, Other };

inline std::string_view to_string(Domain d) {
  switch (d) {
    case Domain::STEM: return "STEM";
    case Domain::Humanities: return "Humanities";
    case Domain::SocialSciences: return "Social Sciences";
    case Domain::Other: return "Other";
  }
  return "Other";
}

inline Domain parse_domain(std::string_view s) {
  for (auto d : {Domain::STEM, Domain::Humanities, Domain::SocialSciences, Domain::Other})
    if (to_string(d) == s) return d;
  if (s == "SocialSciences") return Domain::SocialSciences;
  throw InputError("unknown domain '" + std::string(s) + "'");
}

struct TaskInfo {
  std::string task_id;
  std::string task_name;
  Domain domain = Domain::Other;
  bool operator==(const TaskInfo&) const = default;
};

struct ExpertTaxonomy {
  std::vector<TaskInfo> tasks;
  std::vector<std::string> neutral_personas = {"student", "average student",
                                               "person", "average person"};

  void validate() const {
    std::unordered_set<std::string> seen;
    for (const auto& t : tasks)
      if (!seen.insert(t.task_id).second)
        throw InputError("duplicate task id '" + t.task_id + "'");
  }

  const TaskInfo& task(std::string_view task_id) const {
    for (const auto& t : tasks)
      if (t.task_id == task_id) return t;
    throw LookupError("unknown task '" + std::string(task_id) + "'");
  }
};

inline Persona expert_persona(const TaskInfo& task) {
  return make_persona("expert:" + task.task_id, text::to_lower(task.task_name) + " expert",
                      PersonaCategory::expertise);
}

inline Persona neutral_persona(const std::string& text) {
  std::string id = "neutral:" + text;
  std::replace(id.begin(), id.end(), ' ', '_');
  return make_persona(std::move(id), text, PersonaCategory::neutral);
}

// The 57 MMLU tasks grouped by the benchmark's own four top-level categories.
inline const ExpertTaxonomy& mmlu_taxonomy() {
  static const ExpertTaxonomy taxonomy = [] {
    struct Row { const char* id; Domain d; };
    static constexpr Row rows[] = {
        {"abstract_algebra", Domain::STEM},
        {"anatomy", Domain::Other},
        {"astronomy", Domain::STEM},
        {"business_ethics", Domain::Other},
        {"clinical_knowledge", Domain::Other},
        {"college_biology", Domain::STEM},
        {"college_chemistry", Domain::STEM},
        {"college_computer_science", Domain::STEM},
        {"college_mathematics", Domain::STEM},
        {"college_medicine", Domain::Other},
        {"college_physics", Domain::STEM},
        {"computer_security", Domain::STEM},
        {"conceptual_physics", Domain::STEM},
        {"econometrics", Domain::SocialSciences},
        {"electrical_engineering", Domain::STEM},
        {"elementary_mathematics", Domain::STEM},
        {"formal_logic", Domain::Humanities},
        {"global_facts", Domain::Other},
        {"high_school_biology", Domain::STEM},
        {"high_school_chemistry", Domain::STEM},
        {"high_school_computer_science", Domain::STEM},
        {"high_school_european_history", Domain::Humanities},
        {"high_school_geography", Domain::SocialSciences},
        {"high_school_government_and_politics", Domain::SocialSciences},
        {"high_school_macroeconomics", Domain::SocialSciences},
        {"high_school_mathematics", Domain::STEM},
        {"high_school_microeconomics", Domain::SocialSciences},
        {"high_school_physics", Domain::STEM},
        {"high_school_psychology", Domain::SocialSciences},
        {"high_school_statistics", Domain::STEM},
        {"high_school_us_history", Domain::Humanities},
        {"high_school_world_history", Domain::Humanities},
        {"human_aging", Domain::Other},
        {"human_sexuality", Domain::SocialSciences},
        {"international_law", Domain::Humanities},
        {"jurisprudence", Domain::Humanities},
        {"logical_fallacies", Domain::Humanities},
        {"machine_learning", Domain::STEM},
        {"management", Domain::Other},
        {"marketing", Domain::Other},
        {"medical_genetics", Domain::Other},
        {"miscellaneous", Domain::Other},
        {"moral_disputes", Domain::Humanities},
        {"moral_scenarios", Domain::Humanities},
        {"nutrition", Domain::Other},
        {"philosophy", Domain::Humanities},
        {"prehistory", Domain::Humanities},
        {"professional_accounting", Domain::Other},
        {"professional_law", Domain::Humanities},
        {"professional_medicine", Domain::Other},
        {"professional_psychology", Domain::SocialSciences},
        {"public_relations", Domain::SocialSciences},
        {"security_studies", Domain::SocialSciences},
        {"sociology", Domain::SocialSciences},
        {"us_foreign_policy", Domain::SocialSciences},
        {"virology", Domain::Other},
        {"world_religions", Domain::Humanities},
    };
    ExpertTaxonomy t;
    for (const auto& r : rows) {
      std::string name = r.id;
      std::replace(name.begin(), name.end(), '_', ' ');
      t.tasks.push_back({r.id, name, r.d});
    }
    t.validate();
    return t;
  }();
  return taxonomy;
}

struct PersonaSets {
  Persona task_expert;
  std::vector<Persona> domain_experts;
  std::vector<Persona> non_domain_experts;
  std::vector<Persona> neutral;
};

inline PersonaSets mmlu_persona_sets(const ExpertTaxonomy& taxonomy,
                                     std::string_view task_id) {
  const TaskInfo& target = taxonomy.task(task_id);
  PersonaSets sets{expert_persona(target), {}, {}, {}};
  for (const auto& t : taxonomy.tasks) {
    if (t.task_id == target.task_id) continue;
    (t.domain == target.domain ? sets.domain_experts : sets.non_domain_experts)
        .push_back(expert_persona(t));
  }
  for (const auto& n : taxonomy.neutral_personas) sets.neutral.push_back(neutral_persona(n));
  return sets;
}

// ---------------------------------------------------------------------------
// Rosters

inline std::vector<Persona> builtin_roster(std::string_view name) {
  std::vector<Persona> out;
  auto add = [&](std::string id, std::string text, PersonaCategory c) {
    out.push_back(make_persona(std::move(id), std::move(text), c));
  };
  if (name == "ages") {
    for (int a : {2, 4, 7, 13, 20}) out.push_back(age_persona(a));
  } else if (name == "ages-extended") {
    for (int a = 2; a <= 30; a += 2) out.push_back(age_persona(a));
    for (int a = 35; a <= 60; a += 5) out.push_back(age_persona(a));
  } else if (name == "gender") {
    add("gender:man", "man", PersonaCategory::gender);
    add("gender:woman", "woman", PersonaCategory::gender);
  } else if (name == "race") {
    add("race:black", "black person", PersonaCategory::race);
    add("race:white", "white person", PersonaCategory::race);
  } else if (name == "vision-experts") {
    add("expert:ornithologist", "ornithologist", PersonaCategory::expertise);
    add("expert:car_mechanic", "car mechanic", PersonaCategory::expertise);
  } else if (name == "gender-extra") {
    add("gender:agender", "agender", PersonaCategory::gender);
    add("gender:non_binary", "non-binary", PersonaCategory::gender);
  } else if (name == "race-extra") {
    add("race:indian", "indian person", PersonaCategory::race);
    add("race:asian", "asian person", PersonaCategory::race);
    add("race:hispanic", "hispanic person", PersonaCategory::race);
  } else if (name == "neutral") {
    for (const auto& n : mmlu_taxonomy().neutral_personas) out.push_back(neutral_persona(n));
  } else if (name == "mmlu-experts") {
    for (const auto& t : mmlu_taxonomy().tasks) out.push_back(expert_persona(t));
  } else {
    throw LookupError("unknown roster '" + std::string(name) + "'");
  }
  return out;
}

inline const std::vector<std::string>& builtin_roster_names() {
  static const std::vector<std::string> names = {
      "ages",           "ages-extended", "gender",     "race",        "vision-experts",
      "gender-extra",   "race-extra",    "neutral",    "mmlu-experts"};
  return names;
}

// Roster files: one persona per line, tab separated:
//   id <TAB> display_text <TAB> category [<TAB> age]
// Blank lines and lines starting with '#' are ignored.
inline std::vector<Persona> parse_roster(std::string_view content) {
  std::vector<Persona> out;
  std::size_t lineno = 0;
  for (const auto& raw : text::split_lines(content)) {
    ++lineno;
    std::string_view line = text::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    auto f = text::split(line, '\t');
    if (f.size() < 3 || f.size() > 4)
      throw InputError("roster line " + std::to_string(lineno) + ": expected 3 or 4 fields");
    std::optional<int> age;
    if (f.size() == 4) age = text::parse_int(f[3]);
    try {
      out.push_back(make_persona(f[0], f[1], parse_persona_category(f[2]), age));
    } catch (const InputError& e) {
      throw InputError("roster line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// Taxonomy files: task_id <TAB> task name <TAB> domain, plus optional
// "neutral <TAB> text" lines that replace the default neutral personas.
inline ExpertTaxonomy parse_taxonomy(std::string_view content) {
  ExpertTaxonomy t;
  std::vector<std::string> neutral;
  std::size_t lineno = 0;
  for (const auto& raw : text::split_lines(content)) {
    ++lineno;
    std::string_view line = text::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    auto f = text::split(line, '\t');
    if (f.size() == 2 && f[0] == "neutral") {
      neutral.push_back(f[1]);
      continue;
    }
    if (f.size() != 3)
      throw InputError("taxonomy line " + std::to_string(lineno) + ": expected 3 fields");
    t.tasks.push_back({f[0], f[1], parse_domain(f[2])});
  }
  if (!neutral.empty()) t.neutral_personas = std::move(neutral);
  t.validate();
  return t;
}

inline std::vector<Persona> load_roster(const std::string& path) {
  return parse_roster(text::read_file(path));
}

inline ExpertTaxonomy load_taxonomy(const std::string& path) {
  return parse_taxonomy(text::read_file(path));
}

}  // namespace impersona
