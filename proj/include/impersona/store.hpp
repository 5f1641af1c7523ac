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

// Run directories, manifests and typed JSON Lines records.
//
// Layout:
//   <root>/<run_id>/manifest.json
//   <root>/<run_id>/{games,mcq,tasks,descriptions,runs}.jsonl
//   <root>/<run_id>/report/
//
// Every record line carries "schema" and "kind" fields. Doubles are written
// in shortest round-trip form; non-finite values are written as the strings
// "inf", "-inf" and "nan".

#pragma once

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "impersona/errors.hpp"
#include "impersona/game.hpp"
#include "impersona/jsonl.hpp"
#include "impersona/reasoning.hpp"
#include "impersona/replay.hpp"
#include "impersona/vision.hpp"

namespace impersona::store {

inline constexpr int kSchemaVersion = 1;

using nlohmann::json;

inline json encode_double(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

inline double decode_double(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw StoreError("expected a number, got " + j.dump());
}

inline json encode_doubles(std::span<const double> v) {
  json a = json::array();
  for (double x : v) a.push_back(encode_double(x));
  return a;
}

inline std::vector<double> decode_doubles(const json& j) {
  std::vector<double> out;
  for (const auto& x : j) out.push_back(decode_double(x));
  return out;
}

template <typename T>
json encode_optional(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

template <typename T>
std::optional<T> decode_optional(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

// ---------------------------------------------------------------------------
// Per-type codecs

template <typename T>
struct Codec;

template <>
struct Codec<GameRecord> {
  static constexpr const char* kind = "game";
  static constexpr const char* file = "games.jsonl";

  static json encode(const GameRecord& g) {
    json trials = json::array();
    for (const auto& t : g.trials)
      trials.push_back({{"t", t.t},
                        {"action", t.action},
                        {"reward", encode_double(t.reward)},
                        {"action_logprobs", encode_doubles(t.action_logprobs)}});
    return {{"game_id", g.game_id},           {"persona_id", g.persona_id},
            {"template_id", g.template_id},   {"arm_means", encode_doubles(g.arm_means)},
            {"trials", std::move(trials)},    {"failure", encode_optional(g.failure)}};
  }

  static GameRecord decode(const json& j) {
    GameRecord g;
    g.game_id = j.at("game_id").get<std::int64_t>();
    g.persona_id = j.at("persona_id").get<std::string>();
    g.template_id = j.at("template_id").get<std::string>();
    g.arm_means = decode_doubles(j.at("arm_means"));
    for (const auto& t : j.at("trials")) {
      TrialRecord r;
      r.t = t.at("t").get<int>();
      r.action = t.at("action").get<int>();
      r.reward = decode_double(t.at("reward"));
      const auto lp = decode_doubles(t.at("action_logprobs"));
      if (lp.size() != 2) throw StoreError("trial needs two action logprobs");
      r.action_logprobs = {lp[0], lp[1]};
      g.trials.push_back(r);
    }
    g.failure = decode_optional<std::string>(j, "failure");
    return g;
  }
};

template <>
struct Codec<reasoning::McqRecord> {
  static constexpr const char* kind = "mcq";
  static constexpr const char* file = "mcq.jsonl";

  static json encode(const reasoning::McqRecord& r) {
    json scores = nullptr;
    if (r.scores)
      scores = {{"candidates", r.scores->candidates},
                {"values", encode_doubles(r.scores->values)},
                {"normalized", r.scores->normalized}};
    return {{"item_id", r.item_id},         {"task_id", r.task_id},
            {"persona_id", r.persona_id},   {"template_id", r.template_id},
            {"predicted", encode_optional(r.predicted)},
            {"answer_index", r.answer_index}, {"attempts", r.attempts},
            {"scores", std::move(scores)}};
  }

  static reasoning::McqRecord decode(const json& j) {
    reasoning::McqRecord r;
    r.item_id = j.at("item_id").get<std::string>();
    r.task_id = j.at("task_id").get<std::string>();
    r.persona_id = j.at("persona_id").get<std::string>();
    r.template_id = j.at("template_id").get<std::string>();
    r.predicted = decode_optional<int>(j, "predicted");
    r.answer_index = j.at("answer_index").get<int>();
    r.attempts = j.at("attempts").get<int>();
    if (const auto& s = j.at("scores"); !s.is_null())
      r.scores = CandidateLogProbs{s.at("candidates").get<std::vector<std::string>>(),
                                   decode_doubles(s.at("values")), s.at("normalized").get<bool>()};
    return r;
  }
};

template <>
struct Codec<reasoning::TaskResult> {
  static constexpr const char* kind = "task_result";
  static constexpr const char* file = "tasks.jsonl";

  static json encode(const reasoning::TaskResult& r) {
    return {{"task_id", r.task_id},         {"persona_id", r.persona_id},
            {"template_id", r.template_id}, {"n_items", r.n_items},
            {"n_correct", r.n_correct},     {"n_discarded", r.n_discarded},
            {"accuracy", r.accuracy ? encode_double(*r.accuracy) : json(nullptr)}};
  }

  static reasoning::TaskResult decode(const json& j) {
    reasoning::TaskResult r;
    r.task_id = j.at("task_id").get<std::string>();
    r.persona_id = j.at("persona_id").get<std::string>();
    r.template_id = j.at("template_id").get<std::string>();
    r.n_items = j.at("n_items").get<int>();
    r.n_correct = j.at("n_correct").get<int>();
    r.n_discarded = j.at("n_discarded").get<int>();
    if (!j.at("accuracy").is_null()) r.accuracy = decode_double(j.at("accuracy"));
    return r;
  }
};

template <>
struct Codec<vision::ClassDescription> {
  static constexpr const char* kind = "description";
  static constexpr const char* file = "descriptions.jsonl";

  static json encode(const vision::ClassDescription& d) {
    json log = json::array();
    for (const auto& e : d.scrub_log)
      log.push_back({{"step", e.step}, {"sentence_index", e.sentence_index},
                     {"action", std::string(vision::to_string(e.action))}});
    return {{"dataset_id", d.dataset_id}, {"class_id", d.class_id},
            {"class_name", d.class_name}, {"persona_id", d.persona_id},
            {"template_id", d.template_id}, {"seed", d.seed},
            {"raw_text", d.raw_text},     {"cleaned_text", d.cleaned_text},
            {"scrub_log", std::move(log)}, {"failure", encode_optional(d.failure)}};
  }

  static vision::ClassDescription decode(const json& j) {
    vision::ClassDescription d;
    d.dataset_id = j.at("dataset_id").get<std::string>();
    d.class_id = j.at("class_id").get<std::string>();
    d.class_name = j.at("class_name").get<std::string>();
    d.persona_id = j.at("persona_id").get<std::string>();
    d.template_id = j.at("template_id").get<std::string>();
    d.seed = j.at("seed").get<int>();
    d.raw_text = j.at("raw_text").get<std::string>();
    d.cleaned_text = j.at("cleaned_text").get<std::string>();
    for (const auto& e : j.at("scrub_log"))
      d.scrub_log.push_back({e.at("step").get<int>(), e.at("sentence_index").get<int>(),
                             vision::parse_scrub_action(e.at("action").get<std::string>())});
    d.failure = decode_optional<std::string>(j, "failure");
    return d;
  }
};

template <>
struct Codec<vision::ClassificationRun> {
  static constexpr const char* kind = "classification_run";
  static constexpr const char* file = "runs.jsonl";

  static json encode(const vision::ClassificationRun& r) {
    return {{"dataset_id", r.dataset_id}, {"persona_id", r.persona_id},
            {"template_id", r.template_id}, {"seed", r.seed},
            {"n_total", r.n_total},       {"n_correct", r.n_correct},
            {"accuracy", encode_double(r.accuracy)}, {"confusion", r.confusion}};
  }

  static vision::ClassificationRun decode(const json& j) {
    vision::ClassificationRun r;
    r.dataset_id = j.at("dataset_id").get<std::string>();
    r.persona_id = j.at("persona_id").get<std::string>();
    r.template_id = j.at("template_id").get<std::string>();
    r.seed = j.at("seed").get<int>();
    r.n_total = j.at("n_total").get<int>();
    r.n_correct = j.at("n_correct").get<int>();
    r.accuracy = decode_double(j.at("accuracy"));
    r.confusion = j.at("confusion").get<std::map<std::string, std::map<std::string, int>>>();
    if (r.n_total > 0 && r.accuracy != static_cast<double>(r.n_correct) / r.n_total)
      throw StoreError("classification run accuracy does not match its counts");
    return r;
  }
};

template <typename T>
json to_record(const T& value) {
  json j = Codec<T>::encode(value);
  j["schema"] = kSchemaVersion;
  j["kind"] = Codec<T>::kind;
  return j;
}

template <typename T>
T from_record(const json& j) {
  if (!j.is_object() || !j.contains("schema")) throw MigrationError("record has no schema version");
  const int v = j.at("schema").get<int>();
  if (v != kSchemaVersion)
    throw MigrationError("record schema " + std::to_string(v) + " does not match " +
                         std::to_string(kSchemaVersion));
  if (j.value("kind", "") != Codec<T>::kind)
    throw StoreError("expected a '" + std::string(Codec<T>::kind) + "' record, got '" +
                     j.value("kind", "") + "'");
  try {
    return Codec<T>::decode(j);
  } catch (const json::exception& e) {
    throw StoreError(std::string("malformed ") + Codec<T>::kind + " record: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Files

struct RecordFilter {
  std::optional<std::string> persona_id;
  std::optional<std::string> template_id;

  template <typename T>
  bool matches(const T& r) const {
    return (!persona_id || r.persona_id == *persona_id) &&
           (!template_id || r.template_id == *template_id);
  }
};

template <typename T>
std::size_t write_records(const std::filesystem::path& path, std::span<const T> records) {
  jsonl::Appender out(path);
  for (const auto& r : records) out.append(to_record(r));
  return records.size();
}

// A torn final line raises TruncatedWriteError carrying its byte offset; the
// records before it can be recovered with read_records_prefix().
template <typename T>
std::vector<T> read_records(const std::filesystem::path& path, const RecordFilter& filter = {}) {
  if (!std::filesystem::exists(path)) throw StoreError("missing record file '" + path.string() + "'");
  auto raw = jsonl::read_all(path);
  if (raw.truncated_at) throw TruncatedWriteError(path.string(), *raw.truncated_at);
  std::vector<T> out;
  for (const auto& j : raw.records) {
    auto r = from_record<T>(j);
    if (filter.matches(r)) out.push_back(std::move(r));
  }
  return out;
}

template <typename T>
std::vector<T> read_records_prefix(const std::filesystem::path& path) {
  std::vector<T> out;
  for (const auto& j : jsonl::read_all(path).records) out.push_back(from_record<T>(j));
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

struct RunManifest {
  std::string run_id;
  std::string created_at;  // UTC, ISO 8601
  json config_snapshot = json::object();
  std::string backend_id;
  BackendMode mode = BackendMode::live;
  std::map<std::string, std::int64_t> record_counts;
  int schema_version = kSchemaVersion;

  bool operator==(const RunManifest&) const = default;
};

inline json to_json_value(const RunManifest& m) {
  return {{"run_id", m.run_id},
          {"created_at", m.created_at},
          {"config_snapshot", m.config_snapshot},
          {"backend_id", m.backend_id},
          {"mode", std::string(to_string(m.mode))},
          {"record_counts", m.record_counts},
          {"schema_version", m.schema_version}};
}

inline RunManifest manifest_from_json(const json& j) {
  RunManifest m;
  try {
    m.schema_version = j.at("schema_version").get<int>();
    if (m.schema_version != kSchemaVersion)
      throw MigrationError("manifest schema " + std::to_string(m.schema_version) + " does not match " +
                           std::to_string(kSchemaVersion));
    m.run_id = j.at("run_id").get<std::string>();
    m.created_at = j.at("created_at").get<std::string>();
    m.config_snapshot = j.at("config_snapshot");
    m.backend_id = j.at("backend_id").get<std::string>();
    m.mode = parse_backend_mode(j.at("mode").get<std::string>());
    m.record_counts = j.at("record_counts").get<std::map<std::string, std::int64_t>>();
  } catch (const json::exception& e) {
    throw StoreError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Run ids become directory names.
inline void validate_run_id(std::string_view id) {
  if (id.empty() || id == "." || id == "..") throw ConfigError("run id is empty");
  for (char c : id)
    if (!(text::is_alnum(c) || c == '-' || c == '_' || c == '.'))
      throw ConfigError("run id '" + std::string(id) + "' may only contain letters, digits, '-', '_' and '.'");
}

class RunStore {
 public:
  RunStore(std::filesystem::path root, std::string run_id) : root_(std::move(root)), run_id_(std::move(run_id)) {
    validate_run_id(run_id_);
  }

  const std::string& run_id() const { return run_id_; }
  std::filesystem::path dir() const { return root_ / run_id_; }
  std::filesystem::path manifest_path() const { return dir() / "manifest.json"; }
  std::filesystem::path report_dir() const { return dir() / "report"; }

  // `name` overrides the default file of a record kind.
  template <typename T>
  std::filesystem::path path_of(std::string_view name = {}) const {
    return dir() / (name.empty() ? std::string(Codec<T>::file) : std::string(name));
  }

  bool exists() const { return std::filesystem::exists(manifest_path()); }

  RunManifest read_manifest() const {
    std::ifstream in(manifest_path());
    if (!in) throw StoreError("missing manifest '" + manifest_path().string() + "'");
    try {
      return manifest_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
      throw StoreError("malformed manifest '" + manifest_path().string() + "': " + e.what());
    }
  }

  void write_manifest(const RunManifest& m) const {
    std::filesystem::create_directories(dir());
    const auto tmp = manifest_path().string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw StoreError("cannot write '" + tmp + "'");
      out << to_json_value(m).dump(2) << '\n';
      if (!out) throw StoreError("write to '" + tmp + "' failed");
    }
    std::filesystem::rename(tmp, manifest_path());
  }

  // Appends records of one kind. A kind that already has a file is never
  // rewritten: re-running a completed stage is refused.
  template <typename T>
  std::size_t write_new(std::span<const T> records, std::string_view name = {}) const {
    const auto p = path_of<T>(name);
    if (std::filesystem::exists(p))
      throw StateError("run '" + run_id_ + "' already has " + p.filename().string() +
                       "; refusing to overwrite");
    std::filesystem::create_directories(dir());
    const auto tmp = p.string() + ".partial";
    std::filesystem::remove(tmp);
    write_records<T>(tmp, records);
    std::filesystem::rename(tmp, p);
    return records.size();
  }

  template <typename T>
  std::vector<T> read(const RecordFilter& filter = {}, std::string_view name = {}) const {
    return read_records<T>(path_of<T>(name), filter);
  }

  template <typename T>
  bool has(std::string_view name = {}) const {
    return std::filesystem::exists(path_of<T>(name));
  }

  // Records the count of a kind in the manifest.
  template <typename T>
  void note_count(std::size_t n) const {
    auto m = read_manifest();
    m.record_counts[Codec<T>::kind] = static_cast<std::int64_t>(n);
    write_manifest(m);
  }

 private:
  std::filesystem::path root_;
  std::string run_id_;
};

}  // namespace impersona::store
