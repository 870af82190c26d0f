// Copyright 2026 The partdisc Authors.
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

#include "partdisc/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

#include "partdisc/error.hpp"

namespace partdisc {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kIo: return "io";
    case ErrorKind::kBadMagic: return "bad-magic";
    case ErrorKind::kVersionMismatch: return "version-mismatch";
    case ErrorKind::kTruncated: return "truncated";
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kNumerical: return "numerical";
  }
  return "unknown";
}

namespace log {
namespace {

std::atomic<Level> g_level{Level::kWarn};
std::atomic<std::size_t> g_warnings{0};
std::mutex g_mu;

}  // namespace

void set_level(Level lvl) noexcept { g_level.store(lvl); }
Level level() noexcept { return g_level.load(); }

void warn(std::string_view msg) {
  g_warnings.fetch_add(1);
  if (g_level.load() < Level::kWarn) return;
  std::lock_guard<std::mutex> lock(g_mu);
  std::cerr << "warning: " << msg << '\n';
}

void info(std::string_view msg) {
  if (g_level.load() < Level::kInfo) return;
  std::lock_guard<std::mutex> lock(g_mu);
  std::cerr << msg << '\n';
}

std::size_t warning_count() noexcept { return g_warnings.load(); }
void reset_warning_count() noexcept { g_warnings.store(0); }

}  // namespace log
}  // namespace partdisc
