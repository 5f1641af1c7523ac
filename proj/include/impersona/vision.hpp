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

// Description-based zero-shot classification: persona descriptions of each
// class, class-name scrubbing, embedding providers, cosine-argmax
// classification and paired bias tests.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "impersona/agents.hpp"
#include "impersona/parallel.hpp"
#include "impersona/persona.hpp"
#include "impersona/stats.hpp"
#include "impersona/text.hpp"

namespace impersona::vision {

// ---------------------------------------------------------------------------
// Class lists

struct ClassInfo {
  std::string class_id;  // slug of the name, unique within a dataset
  std::string class_name;
  bool operator==(const ClassInfo&) const = default;
};

struct Dataset {
  std::string dataset_id;
  std::vector<ClassInfo> classes;

  std::size_t index_of(std::string_view class_id) const {
    for (std::size_t i = 0; i < classes.size(); ++i)
      if (classes[i].class_id == class_id) return i;
    throw LookupError("dataset '" + dataset_id + "' has no class '" + std::string(class_id) + "'");
  }
};

inline std::string slugify(std::string_view name) {
  std::string out;
  for (char c : name) {
    if (text::is_alnum(c)) out += text::lower_ascii(c);
    else if (!out.empty() && out.back() != '_') out += '_';
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

inline Dataset make_dataset(std::string dataset_id, const std::vector<std::string>& names) {
  Dataset d{std::move(dataset_id), {}};
  std::set<std::string> seen;
  for (const auto& n : names) {
    const std::string name(text::trim(n));
    if (name.empty()) continue;
    auto id = slugify(name);
    if (id.empty()) throw InputError("class name '" + name + "' has no letters or digits");
    if (!seen.insert(id).second) throw InputError("duplicate class id '" + id + "'");
    d.classes.push_back({std::move(id), name});
  }
  if (d.classes.empty()) throw InputError("dataset '" + d.dataset_id + "' has no classes");
  return d;
}

// One class name per line; blank lines and '#' comments ignored.
inline Dataset load_dataset(const std::string& path, std::string dataset_id = {}) {
  if (dataset_id.empty()) dataset_id = std::filesystem::path(path).stem().string();
  std::vector<std::string> names;
  for (const auto& line : text::split_lines(text::read_file(path)))
    if (!text::trim(line).empty() && text::trim(line).front() != '#') names.push_back(line);
  return make_dataset(std::move(dataset_id), names);
}

// ---------------------------------------------------------------------------
// Description prompts

// Vowel-letter rule only; no pronunciation exceptions.
inline std::string_view indefinite_article(std::string_view noun) {
  if (noun.empty()) return "a";
  return std::string_view("aeiouAEIOU").find(noun.front()) != std::string_view::npos ? "an" : "a";
}

inline std::string build_description_prompt(const Persona& persona, const PromptTemplate& tmpl,
                                             std::string_view class_name) {
  if (text::trim(class_name).empty()) throw InputError("class name is empty");
  return render_prompt(tmpl, persona,
                       ", how would you answer the following question in 45 words?\nQ: What is " +
                           std::string(indefinite_article(class_name)) + " " +
                           std::string(class_name) + "?\nA: It is");
}

enum class ScrubAction { heuristic, llm, kept_original };

inline std::string_view to_string(ScrubAction a) {
  switch (a) {
    case ScrubAction::heuristic: return "heuristic";
    case ScrubAction::llm: return "llm";
    case ScrubAction::kept_original: return "kept_original";
  }
  return "heuristic";
}

inline ScrubAction parse_scrub_action(std::string_view s) {
  for (auto a : {ScrubAction::heuristic, ScrubAction::llm, ScrubAction::kept_original})
    if (to_string(a) == s) return a;
  throw InputError("unknown scrub action '" + std::string(s) + "'");
}

struct ScrubLogEntry {
  int step = 1;  // 1 heuristic, 2 language model
  int sentence_index = 0;
  ScrubAction action = ScrubAction::heuristic;
  bool operator==(const ScrubLogEntry&) const = default;
};

struct ClassDescription {
  std::string dataset_id;
  std::string class_id;
  std::string class_name;
  std::string persona_id;
  std::string template_id;
  int seed = 0;
  std::string raw_text;
  std::string cleaned_text;  // empty until scrubbed
  std::vector<ScrubLogEntry> scrub_log;
  std::optional<std::string> failure;  // generation failed twice

  std::string key() const {
    return dataset_id + "/" + class_id + "/" + persona_id + "/" + std::to_string(seed);
  }
  bool operator==(const ClassDescription&) const = default;
};

inline constexpr std::string_view kDescriptionCue = "It is";

struct DescribeOptions {
  std::vector<int> seeds = {0, 1, 2, 3, 4};
  GenerationParams params = GenerationParams::free_text();
  std::size_t parallelism = 1;
};

// One raw description per (class, persona, seed), in that nesting order.
// A failed generation is retried once; a second failure marks the cell.
inline std::vector<ClassDescription> generate_descriptions(const Dataset& dataset,
                                                           std::span<const Persona> personas,
                                                           const PromptTemplate& tmpl,
                                                           const Agent& agent,
                                                           const DescribeOptions& opt = {}) {
  opt.params.validate();
  if (opt.seeds.empty()) throw InputError("no seeds requested");
  std::vector<ClassDescription> out;
  for (const auto& c : dataset.classes)
    for (const auto& p : personas)
      for (int seed : opt.seeds)
        out.push_back({dataset.dataset_id, c.class_id, c.class_name, p.id, tmpl.id, seed, {}, {}, {}, {}});
  std::map<std::string, const Persona*> by_id;
  for (const auto& p : personas) by_id[p.id] = &p;

  const std::size_t workers = std::min(opt.parallelism, agent.max_in_flight());
  std::vector<std::unique_ptr<Agent>> clones;
  for (std::size_t w = 0; w < std::max<std::size_t>(workers, 1); ++w) clones.push_back(agent.clone());
  parallel_for(out.size(), workers, [&](std::size_t i, std::size_t w) {
    auto& d = out[i];
    const auto prompt = build_description_prompt(*by_id.at(d.persona_id), tmpl, d.class_name);
    GenerationParams params = opt.params;
    params.seed = static_cast<std::uint64_t>(d.seed);
    for (int attempt = 0; attempt < 2; ++attempt) {
      try {
        d.raw_text = std::string(kDescriptionCue) + clones[w]->generate(prompt, params);
        d.failure.reset();
        return;
      } catch (const Error& e) {
        d.failure = e.what();
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Class-name matching

namespace detail {
inline std::string regex_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (std::string_view(".^$|()[]{}*+?\\/").find(c) != std::string_view::npos) out += '\\';
    if (c == ' ') {
      out += "\\s+";
      continue;
    }
    out += c;
  }
  return out;
}

inline bool is_word_char(char c) { return text::is_alnum(c); }
}  // namespace detail

inline std::string plural_of(std::string_view name) {
  std::string s(name);
  if (s.empty()) return s;
  const char last = text::lower_ascii(s.back());
  const char prev = s.size() > 1 ? text::lower_ascii(s[s.size() - 2]) : '\0';
  if (last == 'y' && std::string_view("aeiou").find(prev) == std::string_view::npos && prev)
    return s.substr(0, s.size() - 1) + (std::isupper(static_cast<unsigned char>(s.back())) ? "IES" : "ies");
  if (last == 's' || last == 'x' || (last == 'h' && (prev == 'c' || prev == 's'))) return s + "es";
  if (!text::is_alnum(s.back())) return s;
  return s + "s";
}

// True when `text` mentions the class name or its plural as a whole word,
// ignoring case.
inline bool mentions_class(std::string_view text, std::string_view class_name) {
  for (const std::string& form : {std::string(class_name), plural_of(class_name)}) {
    if (form.empty()) continue;
    for (std::size_t pos = text::find_icase(text, form); pos != std::string_view::npos;
         pos = text::find_icase(text, form, pos + 1)) {
      const bool left = pos == 0 || !detail::is_word_char(text[pos - 1]) ||
                        !detail::is_word_char(form.front());
      const std::size_t end = pos + form.size();
      const bool right = end >= text.size() || !detail::is_word_char(text[end]) ||
                         !detail::is_word_char(form.back());
      if (left && right) return true;
    }
  }
  return false;
}

// ---------------------------------------------------------------------------
// Step 1: heuristic rewrites

namespace detail {
template <typename Fn>
std::string regex_replace_fn(const std::string& s, const std::regex& re, Fn&& fn) {
  std::string out;
  std::size_t last = 0;
  for (std::sregex_iterator it(s.begin(), s.end(), re), end; it != end; ++it) {
    const auto& m = *it;
    out.append(s, last, static_cast<std::size_t>(m.position(0)) - last);
    out += fn(m);
    last = static_cast<std::size_t>(m.position(0) + m.length(0));
  }
  out.append(s, last, std::string::npos);
  return out;
}

inline std::string capitalize_if(bool cap, std::string word) {
  if (cap && !word.empty()) word[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(word[0])));
  return word;
}
}  // namespace detail

// Casing- and number-aware pronoun substitution:
//   (A|An|The) <name> <verb> at a sentence start  -> It <verb>
//   <name>s <verb> at a sentence start            -> They <verb>
//   the <name> elsewhere                          -> it
//   <name>'s                                      -> its  (<name>s' -> their)
// Mentions the rules do not cover are left for the language-model step.
// Applying the function twice gives the same result as applying it once.
class HeuristicScrubber {
 public:
  explicit HeuristicScrubber(std::string_view class_name) : name_(class_name) {
    if (text::trim(class_name).empty()) return;
    const auto flags = std::regex::ECMAScript | std::regex::icase;
    const std::string name = detail::regex_escape(class_name);
    const std::string plural = detail::regex_escape(plural_of(class_name));
    const std::string start = R"((^|[.!?]["')\]]*\s+|\n\s*))";
    const std::string optional_start = "(" + start.substr(1, start.size() - 2) + ")?";
    const std::string det = R"((?:(?:the|an|a)\s+)?)";
    const std::string after = R"((?![A-Za-z0-9]))";
    rules_ = {
        {std::regex(optional_start + det + plural + "'" + after, flags), "their"},
        {std::regex(optional_start + det + name + "'s" + after, flags), "its"},
        {std::regex(start + det + plural + after, flags), "they"},
        {std::regex(start + det + name + after, flags), "it"},
        {std::regex(R"((\b)the\s+)" + name + after, flags), "it"},
    };
  }

  std::string operator()(std::string_view input) const {
    std::string s(input);
    if (rules_.empty() || !mentions_class(s, name_)) return s;
    for (std::size_t r = 0; r < rules_.size(); ++r) {
      const bool sentence_rule = r < 4;
      const char* word = rules_[r].second;
      s = detail::regex_replace_fn(s, rules_[r].first, [&](const std::smatch& m) {
        if (!sentence_rule) return std::string(word);
        const bool at_start = m[1].matched;
        return (at_start ? m[1].str() : std::string()) + detail::capitalize_if(at_start, word);
      });
    }
    return s;
  }

 private:
  std::string name_;
  std::vector<std::pair<std::regex, const char*>> rules_;
};

inline std::string scrub_heuristic(std::string_view input, std::string_view class_name) {
  return HeuristicScrubber(class_name)(input);
}

// ---------------------------------------------------------------------------
// Sentence segmentation

struct SentenceSpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // one past the terminal punctuation
};

inline const std::vector<std::string>& abbreviations() {
  static const std::vector<std::string> a = {
      "mr.", "mrs.", "ms.", "dr.", "prof.", "st.", "mt.", "jr.", "sr.", "vs.", "etc.", "e.g.",
      "i.e.", "approx.", "no.", "inc.", "co.", "ltd.", "u.s.", "u.k.", "fig.", "cf.", "ca.",
      "conv.", "sp.", "spp.", "var.", "subsp."};
  return a;
}

// Splits after '.', '!' or '?' (plus closing quotes or brackets) when
// followed by whitespace and then an uppercase letter, digit, quote or
// opening bracket, unless the period ends a known abbreviation, a
// single capital initial, or falls inside one of `protected_phrases`. A
// period right after a protected phrase is never an abbreviation.
inline std::vector<SentenceSpan> split_sentences(std::string_view s,
                                                 std::span<const std::string> protected_phrases = {}) {
  std::vector<std::pair<std::size_t, std::size_t>> guards;
  for (const auto& p : protected_phrases)
    if (!p.empty())
      for (auto pos = text::find_icase(s, p); pos != std::string_view::npos;
           pos = text::find_icase(s, p, pos + 1))
        guards.emplace_back(pos, pos + p.size());

  std::vector<SentenceSpan> out;
  std::size_t i = 0;
  while (i < s.size() && text::is_space(s[i])) ++i;
  std::size_t begin = i;
  for (; i < s.size(); ++i) {
    const char c = s[i];
    if (c != '.' && c != '!' && c != '?') continue;
    std::size_t j = i + 1;
    while (j < s.size() && (s[j] == '.' || s[j] == '!' || s[j] == '?')) ++j;
    while (j < s.size() && std::string_view("\"')]").find(s[j]) != std::string_view::npos) ++j;
    if (j < s.size() && !text::is_space(s[j])) continue;
    std::size_t next = j;
    while (next < s.size() && text::is_space(s[next])) ++next;
    if (next < s.size() && !std::isupper(static_cast<unsigned char>(s[next])) &&
        !std::isdigit(static_cast<unsigned char>(s[next])) &&
        std::string_view("\"'([").find(s[next]) == std::string_view::npos)
      continue;
    bool closes_phrase = false;
    for (const auto& [gb, ge] : guards) closes_phrase = closes_phrase || ge == i;
    if (c == '.' && j == i + 1 && !closes_phrase) {
      std::size_t w = i;
      while (w > begin && !text::is_space(s[w - 1])) --w;
      const std::string word = text::to_lower(s.substr(w, i + 1 - w));
      const auto& abbr = abbreviations();
      if (std::find(abbr.begin(), abbr.end(), word) != abbr.end()) continue;
      if (word.size() == 2 && std::isupper(static_cast<unsigned char>(s[w]))) continue;
    }
    bool guarded = false;
    for (const auto& [gb, ge] : guards) guarded = guarded || (i >= gb && i + 1 < ge);
    if (guarded) continue;
    out.push_back({begin, j});
    i = j;
    while (i < s.size() && text::is_space(s[i])) ++i;
    begin = i;
    --i;
  }
  std::size_t end = s.size();
  while (end > begin && text::is_space(s[end - 1])) --end;
  if (end > begin) out.push_back({begin, end});
  return out;
}

// ---------------------------------------------------------------------------
// Step 2: sentence rewriting by a language model

struct ScrubDemo {
  std::string class_name;
  std::string sentence;
  std::string rewritten;
};

// Fixed in-context demonstrations: pronoun substitution, generic noun
// substitution, plural handling and clause deletion.
inline const std::vector<ScrubDemo>& scrub_demos() {
  static const std::vector<ScrubDemo> d = {
      {"Painted Bunting", "The Painted Bunting has a bright blue head and a red belly.",
       "This bird has a bright blue head and a red belly."},
      {"Tesla Model S Sedan 2012", "Many drivers recognize a Tesla Model S Sedan 2012 by its smooth shape.",
       "Many drivers recognize it by its smooth shape."},
      {"Sunflower", "Fields of sunflowers turn to face the morning sun.",
       "Fields of these flowers turn to face the morning sun."},
      {"Boeing 747", "It is a large airliner, which pilots call the Boeing 747 or the queen of the skies.",
       "It is a large airliner, which pilots call the queen of the skies."},
  };
  return d;
}

inline std::string build_scrub_prompt(std::string_view sentence, std::string_view class_name) {
  std::string p =
      "Rewrite the sentence so that it no longer contains the name. Keep every other detail.\n\n";
  for (const auto& d : scrub_demos())
    p += "Name: " + d.class_name + "\nSentence: " + d.sentence + "\nRewritten: " + d.rewritten + "\n\n";
  p += "Name: " + std::string(class_name) + "\nSentence: " + std::string(sentence) + "\nRewritten:";
  return p;
}

inline GenerationParams scrub_params() {
  GenerationParams p;
  p.temperature = 0.0;
  p.top_k = std::nullopt;
  p.max_tokens = 96;
  p.stop_sequences = {"\n"};
  p.seed = 0;
  return p;
}

struct ScrubResult {
  std::string text;
  std::vector<ScrubLogEntry> log;
};

namespace detail {
inline std::string reassemble(std::string_view original, const std::vector<SentenceSpan>& spans,
                              const std::vector<std::string>& sentences) {
  std::string out;
  std::size_t cursor = 0;
  for (std::size_t k = 0; k < spans.size(); ++k) {
    out.append(original.substr(cursor, spans[k].begin - cursor));
    out += sentences[k];
    cursor = spans[k].end;
  }
  out.append(original.substr(cursor));
  return out;
}
}  // namespace detail

// Rewrites every sentence that still mentions the class. A rewrite that is
// empty, still mentions the class, or fails is replaced by the original
// sentence and logged as kept_original.
inline ScrubResult scrub_llm(std::string_view input, std::string_view class_name, Agent& agent) {
  ScrubResult r{std::string(input), {}};
  if (!mentions_class(input, class_name)) return r;
  const std::vector<std::string> guard = {std::string(class_name), plural_of(class_name)};
  const auto spans = split_sentences(input, guard);
  std::vector<std::string> sentences;
  for (const auto& sp : spans) sentences.emplace_back(input.substr(sp.begin, sp.end - sp.begin));
  for (std::size_t k = 0; k < sentences.size(); ++k) {
    if (!mentions_class(sentences[k], class_name)) continue;
    std::string rewritten;
    try {
      rewritten = std::string(text::trim(agent.generate(build_scrub_prompt(sentences[k], class_name),
                                                        scrub_params())));
    } catch (const Error&) {
      rewritten.clear();
    }
    if (rewritten.empty() || mentions_class(rewritten, class_name)) {
      r.log.push_back({2, static_cast<int>(k), ScrubAction::kept_original});
    } else {
      sentences[k] = std::move(rewritten);
      r.log.push_back({2, static_cast<int>(k), ScrubAction::llm});
    }
  }
  r.text = detail::reassemble(input, spans, sentences);
  return r;
}

// Both steps. Heuristic rewrites are applied and logged per sentence; the
// language model only sees sentences the heuristics could not clean.
inline ScrubResult scrub_description(std::string_view raw, std::string_view class_name, Agent& agent) {
  const std::vector<std::string> guard = {std::string(class_name), plural_of(class_name)};
  const auto spans = split_sentences(raw, guard);
  std::vector<std::string> sentences;
  ScrubResult r;
  const HeuristicScrubber heuristic(class_name);
  for (std::size_t k = 0; k < spans.size(); ++k) {
    const std::string original(raw.substr(spans[k].begin, spans[k].end - spans[k].begin));
    std::string cleaned = heuristic(original);
    if (cleaned != original) r.log.push_back({1, static_cast<int>(k), ScrubAction::heuristic});
    sentences.push_back(std::move(cleaned));
  }
  for (std::size_t k = 0; k < sentences.size(); ++k) {
    if (!mentions_class(sentences[k], class_name)) continue;
    auto step2 = scrub_llm(sentences[k], class_name, agent);
    // The sentence is treated as a single unit; re-index its log entries.
    bool kept = false;
    for (const auto& e : step2.log) kept = kept || e.action == ScrubAction::kept_original;
    r.log.push_back({2, static_cast<int>(k), kept ? ScrubAction::kept_original : ScrubAction::llm});
    sentences[k] = kept ? sentences[k] : step2.text;
  }
  r.text = detail::reassemble(raw, spans, sentences);
  return r;
}

inline void scrub_all(std::vector<ClassDescription>& descriptions, const Agent& agent,
                      std::size_t parallelism = 1) {
  const std::size_t workers = std::min(parallelism, agent.max_in_flight());
  std::vector<std::unique_ptr<Agent>> clones;
  for (std::size_t w = 0; w < std::max<std::size_t>(workers, 1); ++w) clones.push_back(agent.clone());
  parallel_for(descriptions.size(), workers, [&](std::size_t i, std::size_t w) {
    auto& d = descriptions[i];
    if (d.failure) return;
    auto r = scrub_description(d.raw_text, d.class_name, *clones[w]);
    d.cleaned_text = std::move(r.text);
    d.scrub_log = std::move(r.log);
  });
}

// ---------------------------------------------------------------------------
// Embeddings

struct EmbeddingVector {
  std::vector<double> values;
  bool normalized = false;

  std::size_t dims() const { return values.size(); }
  double norm() const {
    double s = 0;
    for (double v : values) s += v * v;
    return std::sqrt(s);
  }
  bool operator==(const EmbeddingVector&) const = default;
};

inline constexpr double kNormTolerance = 1e-6;

inline EmbeddingVector normalize(EmbeddingVector v) {
  const double n = v.norm();
  if (!(n > 0) || !std::isfinite(n)) throw InputError("cannot normalize a zero or non-finite vector");
  for (auto& x : v.values) x /= n;
  v.normalized = true;
  return v;
}

struct EmbeddingRequest {
  std::string key;  // dataset/class/persona/seed, or an image id
  std::string text;
};

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string provider_id() const = 0;
  // Raw (not necessarily normalized) vectors, one per request, in order.
  virtual std::vector<EmbeddingVector> embed(std::span<const EmbeddingRequest> requests) = 0;
};

// Binary fixture layout, all integers little-endian:
//   magic "IMPEMB01" | u32 dims | u32 count |
//   count x ( u32 key_len | key bytes | dims x float32 )
inline constexpr char kEmbeddingMagic[8] = {'I', 'M', 'P', 'E', 'M', 'B', '0', '1'};

namespace detail {
inline void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FixtureError("truncated embedding file '" + path + "'");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
}  // namespace detail

using EmbeddingTable = std::vector<std::pair<std::string, EmbeddingVector>>;

inline void write_embedding_file(const std::filesystem::path& path, const EmbeddingTable& table) {
  if (table.empty()) throw InputError("no embeddings to write");
  const auto dims = table.front().second.dims();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StoreError("cannot write '" + path.string() + "'");
  out.write(kEmbeddingMagic, sizeof kEmbeddingMagic);
  detail::put_u32(out, static_cast<std::uint32_t>(dims));
  detail::put_u32(out, static_cast<std::uint32_t>(table.size()));
  for (const auto& [key, v] : table) {
    if (v.dims() != dims) throw InputError("embedding '" + key + "' has the wrong dimension");
    detail::put_u32(out, static_cast<std::uint32_t>(key.size()));
    out.write(key.data(), static_cast<std::streamsize>(key.size()));
    for (double x : v.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  }
  if (!out) throw StoreError("write to '" + path.string() + "' failed");
}

inline EmbeddingTable read_embedding_file(const std::filesystem::path& path) {
  const std::string p = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FixtureError("cannot open embedding file '" + p + "'");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kEmbeddingMagic, 8) != 0)
    throw FixtureError("'" + p + "' is not an embedding file");
  const auto dims = detail::get_u32(in, p);
  const auto count = detail::get_u32(in, p);
  EmbeddingTable table;
  table.reserve(count);
  for (std::uint32_t r = 0; r < count; ++r) {
    const auto len = detail::get_u32(in, p);
    std::string key(len, '\0');
    if (!in.read(key.data(), len)) throw FixtureError("truncated embedding file '" + p + "'");
    EmbeddingVector v;
    v.values.reserve(dims);
    for (std::uint32_t k = 0; k < dims; ++k)
      v.values.push_back(std::bit_cast<float>(detail::get_u32(in, p)));
    table.emplace_back(std::move(key), std::move(v));
  }
  return table;
}

// Serves precomputed vectors by key. A description key
// "dataset/class/persona/seed" falls back to "dataset/class/persona" and then
// to "dataset/class", so one vector can stand for a whole class.
class FileEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit FileEmbeddingProvider(const std::filesystem::path& path) : path_(path.string()) {
    for (auto& [k, v] : read_embedding_file(path)) vectors_[k] = std::move(v);
  }

  std::string provider_id() const override { return "file:" + path_; }

  std::vector<EmbeddingVector> embed(std::span<const EmbeddingRequest> requests) override {
    std::vector<EmbeddingVector> out;
    for (const auto& r : requests) out.push_back(lookup(r.key));
    return out;
  }

  const EmbeddingVector& lookup(const std::string& key) const {
    std::string k = key;
    for (;;) {
      if (auto it = vectors_.find(k); it != vectors_.end()) return it->second;
      const auto slash = k.rfind('/');
      if (slash == std::string::npos || std::count(k.begin(), k.end(), '/') < 2) break;
      k.resize(slash);
    }
    throw FixtureError("no embedding for '" + key + "' in '" + path_ + "'");
  }

  // Every entry whose key starts with `prefix`, in key order.
  std::vector<std::pair<std::string, EmbeddingVector>> with_prefix(std::string_view prefix) const {
    std::vector<std::pair<std::string, EmbeddingVector>> out;
    for (const auto& [k, v] : vectors_)
      if (k.starts_with(prefix)) out.emplace_back(k, v);
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
  }

 private:
  std::string path_;
  std::unordered_map<std::string, EmbeddingVector> vectors_;
};

// Normalized embeddings of the scrubbed descriptions, keyed by
// ClassDescription::key(). Failed cells are skipped.
inline std::map<std::string, EmbeddingVector> embed_descriptions(
    std::span<const ClassDescription> descriptions, EmbeddingProvider& provider,
    std::size_t batch = 64) {
  std::vector<EmbeddingRequest> requests;
  for (const auto& d : descriptions)
    if (!d.failure) requests.push_back({d.key(), d.cleaned_text.empty() ? d.raw_text : d.cleaned_text});
  std::map<std::string, EmbeddingVector> out;
  for (std::size_t i = 0; i < requests.size(); i += batch) {
    const auto n = std::min(batch, requests.size() - i);
    const auto vecs = provider.embed(std::span(requests).subspan(i, n));
    if (vecs.size() != n) throw TransportError("embedding provider returned the wrong count");
    for (std::size_t k = 0; k < n; ++k) out[requests[i + k].key] = normalize(vecs[k]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Zero-shot classification

struct LabeledImage {
  std::string item_id;
  std::size_t true_class = 0;
  EmbeddingVector embedding;
};

struct ClassificationRun {
  std::string dataset_id;
  std::string persona_id;
  std::string template_id;
  int seed = 0;
  int n_total = 0;
  int n_correct = 0;
  double accuracy = 0.0;
  std::map<std::string, std::map<std::string, int>> confusion;  // true -> predicted -> count

  bool operator==(const ClassificationRun&) const = default;
};

namespace detail {
inline void require_unit(const EmbeddingVector& v, std::size_t dims, const std::string& what) {
  if (v.dims() != dims) throw InputError(what + ": dimension " + std::to_string(v.dims()) +
                                         " does not match " + std::to_string(dims));
  if (std::abs(v.norm() - 1.0) > kNormTolerance) throw InputError(what + " is not normalized");
}
}  // namespace detail

// Index of the class description with the largest dot product; ties go to
// the lowest class index.
inline std::size_t predict_class(const EmbeddingVector& image,
                                 std::span<const EmbeddingVector> class_embeddings) {
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < class_embeddings.size(); ++c) {
    double dot = 0;
    const auto& d = class_embeddings[c].values;
    for (std::size_t k = 0; k < d.size(); ++k) dot += image.values[k] * d[k];
    if (dot > best_score) {
      best_score = dot;
      best = c;
    }
  }
  return best;
}

inline ClassificationRun classify_zero_shot(std::span<const LabeledImage> images,
                                            std::span<const EmbeddingVector> class_embeddings,
                                            const Dataset& dataset,
                                            std::vector<std::size_t>* predictions = nullptr) {
  if (class_embeddings.empty()) throw InputError("no class embeddings");
  if (class_embeddings.size() != dataset.classes.size())
    throw InputError("one description embedding per class is required");
  if (images.empty()) throw InputError("no images to classify");
  const auto dims = class_embeddings[0].dims();
  for (std::size_t c = 0; c < class_embeddings.size(); ++c)
    detail::require_unit(class_embeddings[c], dims, "class '" + dataset.classes[c].class_id + "'");
  ClassificationRun run;
  run.dataset_id = dataset.dataset_id;
  for (const auto& img : images) {
    detail::require_unit(img.embedding, dims, "image '" + img.item_id + "'");
    if (img.true_class >= dataset.classes.size()) throw InputError("image '" + img.item_id + "' has no class");
    const auto pred = predict_class(img.embedding, class_embeddings);
    if (predictions) predictions->push_back(pred);
    ++run.n_total;
    run.n_correct += pred == img.true_class;
    ++run.confusion[dataset.classes[img.true_class].class_id][dataset.classes[pred].class_id];
  }
  run.accuracy = static_cast<double>(run.n_correct) / run.n_total;
  return run;
}

// Images stored in an embedding file under "image:<class_id>/<item>".
inline std::vector<LabeledImage> images_from(const FileEmbeddingProvider& file, const Dataset& dataset) {
  std::vector<LabeledImage> out;
  for (auto& [key, v] : file.with_prefix("image:")) {
    const auto rest = key.substr(6);
    const auto slash = rest.find('/');
    if (slash == std::string::npos) throw FixtureError("malformed image key '" + key + "'");
    out.push_back({rest, dataset.index_of(rest.substr(0, slash)), normalize(v)});
  }
  if (out.empty()) throw FixtureError("no image embeddings in '" + file.provider_id() + "'");
  return out;
}

// Runs one classification per (persona, template, seed) present in the
// description embeddings.
inline std::vector<ClassificationRun> classify_all(std::span<const ClassDescription> descriptions,
                                                   const std::map<std::string, EmbeddingVector>& embedded,
                                                   std::span<const LabeledImage> images,
                                                   const Dataset& dataset) {
  std::map<std::tuple<std::string, std::string, int>, std::vector<const ClassDescription*>> cells;
  for (const auto& d : descriptions)
    if (!d.failure && d.dataset_id == dataset.dataset_id)
      cells[{d.persona_id, d.template_id, d.seed}].push_back(&d);
  std::vector<ClassificationRun> runs;
  for (const auto& [cell, members] : cells) {
    std::vector<std::optional<EmbeddingVector>> per_class(dataset.classes.size());
    for (const auto* d : members) per_class[dataset.index_of(d->class_id)] = embedded.at(d->key());
    std::vector<EmbeddingVector> classes;
    std::vector<std::string> missing;
    for (std::size_t c = 0; c < per_class.size(); ++c) {
      if (per_class[c]) classes.push_back(*per_class[c]);
      else missing.push_back(dataset.classes[c].class_id);
    }
    if (!missing.empty())
      throw InputError("persona '" + std::get<0>(cell) + "' seed " + std::to_string(std::get<2>(cell)) +
                       " lacks descriptions for: " + text::join(missing, ", "));
    auto run = classify_zero_shot(images, classes, dataset);
    std::tie(run.persona_id, run.template_id, run.seed) = cell;
    runs.push_back(std::move(run));
  }
  return runs;
}

// ---------------------------------------------------------------------------
// Bias report

struct PersonaPair {
  std::string a;
  std::string b;
};

struct BiasRow {
  std::string dataset_id;
  std::string persona_a;
  std::string persona_b;
  stats::MeanCI accuracy_a;
  stats::MeanCI accuracy_b;
  std::size_t n_runs = 0;  // per persona
  stats::Table2x2 counts{};  // rows a, b; columns correct, incorrect
  stats::ChiSquareResult chi_square;
};

namespace detail {
inline stats::MeanCI run_ci(const std::vector<double>& acc) {
  if (acc.size() >= 2) return stats::mean_ci95(acc);
  return {acc[0], acc[0], acc[0]};
}
}  // namespace detail

// For each dataset and persona pair: mean accuracy with a 95% interval over
// runs (seeds x templates), and a Pearson chi-square test on the pooled
// correct/incorrect counts. A table with an empty margin (e.g. both personas
// perfect) carries no evidence and reports statistic 0, p = 1.
inline std::vector<BiasRow> bias_report(std::span<const ClassificationRun> runs,
                                        std::span<const PersonaPair> pairs) {
  std::map<std::string, std::map<std::string, std::vector<const ClassificationRun*>>> index;
  for (const auto& r : runs) index[r.dataset_id][r.persona_id].push_back(&r);
  std::vector<BiasRow> rows;
  for (const auto& [dataset, by_persona] : index) {
    for (const auto& pair : pairs) {
      auto ia = by_persona.find(pair.a), ib = by_persona.find(pair.b);
      if (ia == by_persona.end() && ib == by_persona.end()) continue;
      if (ia == by_persona.end() || ib == by_persona.end())
        throw ReportError(dataset + ": persona '" + (ia == by_persona.end() ? pair.a : pair.b) +
                          "' has no runs to pair with");
      auto cells = [](const std::vector<const ClassificationRun*>& v) {
        std::multiset<std::pair<std::string, int>> s;
        for (const auto* r : v) s.insert({r->template_id, r->seed});
        return s;
      };
      if (cells(ia->second) != cells(ib->second))
        throw ReportError(dataset + ": runs for '" + pair.a + "' and '" + pair.b +
                          "' do not share templates and seeds");
      BiasRow row;
      row.dataset_id = dataset;
      row.persona_a = pair.a;
      row.persona_b = pair.b;
      row.n_runs = ia->second.size();
      std::vector<double> acc_a, acc_b;
      for (const auto* r : ia->second) {
        acc_a.push_back(r->accuracy);
        row.counts[0][0] += r->n_correct;
        row.counts[0][1] += r->n_total - r->n_correct;
      }
      for (const auto* r : ib->second) {
        acc_b.push_back(r->accuracy);
        row.counts[1][0] += r->n_correct;
        row.counts[1][1] += r->n_total - r->n_correct;
      }
      row.accuracy_a = detail::run_ci(acc_a);
      row.accuracy_b = detail::run_ci(acc_b);
      const bool empty_margin = row.counts[0][0] + row.counts[1][0] == 0 ||
                                row.counts[0][1] + row.counts[1][1] == 0;
      row.chi_square = empty_margin ? stats::ChiSquareResult{0.0, 1, 1.0}
                                    : stats::chi_square_test(row.counts);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace impersona::vision
