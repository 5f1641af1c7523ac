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

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace impersona {

// Root of every error thrown by the library. Each subclass maps to one
// failure family so callers (and the CLI exit-code table) can dispatch on it.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TemplateError : public Error { using Error::Error; };
class LookupError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class StateError : public Error { using Error::Error; };
class FitError : public Error { using Error::Error; };
class InputError : public Error { using Error::Error; };
class AggregationError : public Error { using Error::Error; };
class ReportError : public Error { using Error::Error; };

// Backend-facing failures.
class TransportError : public Error { using Error::Error; };
class FixtureError : public Error { using Error::Error; };
class TokenizationError : public Error { using Error::Error; };

// Persistence.
class StoreError : public Error { using Error::Error; };
class MigrationError : public StoreError { using StoreError::StoreError; };

class TruncatedWriteError : public StoreError {
 public:
  TruncatedWriteError(const std::string& path, std::uint64_t offset)
      : StoreError(path + ": truncated or corrupt record at byte offset " +
                   std::to_string(offset)),
        offset_(offset) {}

  // Byte offset of the first unreadable line; everything before it is intact.
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace impersona
