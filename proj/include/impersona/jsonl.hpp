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

// JSON Lines primitives: an append-only serialized writer and a reader that
// locates a torn tail.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "impersona/errors.hpp"

namespace impersona::jsonl {

// Every record line ends with '\n'. Concurrent callers are serialized; each
// line is flushed before append() returns.
class Appender {
 public:
  explicit Appender(const std::filesystem::path& path) : path_(path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::binary | std::ios::app);
    if (!out_) throw StoreError("cannot open '" + path.string() + "' for appending");
  }

  void append(const nlohmann::json& record) {
    const std::string line = record.dump() + '\n';
    std::lock_guard lock(mu_);
    out_.write(line.data(), static_cast<std::streamsize>(line.size()));
    out_.flush();
    if (!out_) throw StoreError("write to '" + path_.string() + "' failed");
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mu_;
  std::ofstream out_;
};

struct ReadResult {
  std::vector<nlohmann::json> records;
  std::optional<std::uint64_t> truncated_at;  // byte offset of the torn line
};

// Reads every complete record. A line that fails to parse or lacks its
// terminating newline stops the read; its offset is reported.
inline ReadResult read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StoreError("cannot open '" + path.string() + "'");
  const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ReadResult r;
  std::size_t pos = 0;
  while (pos < content.size()) {
    const auto nl = content.find('\n', pos);
    if (nl == std::string::npos) {
      r.truncated_at = pos;
      break;
    }
    const std::string_view line(content.data() + pos, nl - pos);
    if (!line.empty()) {
      try {
        r.records.push_back(nlohmann::json::parse(line));
      } catch (const nlohmann::json::exception&) {
        r.truncated_at = pos;
        break;
      }
    }
    pos = nl + 1;
  }
  return r;
}

inline void write_all(const std::filesystem::path& path, const std::vector<nlohmann::json>& records) {
  Appender out(path);
  for (const auto& r : records) out.append(r);
}

}  // namespace impersona::jsonl
