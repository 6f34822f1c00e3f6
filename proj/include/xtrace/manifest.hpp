/* Copyright 2026 The xtrace Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef XTRACE_MANIFEST_HPP_
#define XTRACE_MANIFEST_HPP_

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "xtrace/trace.hpp"

namespace xtrace {

inline constexpr std::string_view kToolVersion = "0.1.0";

// 64-bit FNV-1a. Stable across platforms, which is all the manifest needs.
inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct RunManifest {
  std::string command_line;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string tool_version = std::string(kToolVersion);
  std::vector<std::string> notes;
  // Only field that varies between identical runs; kept last.
  double wall_seconds = 0.0;
};

inline std::string encode_manifest(const RunManifest& m) {
  std::string out;
  out += "command=" + m.command_line + "\n";
  out += "config_hash=" + m.config_hash + "\n";
  out += "seed=" + std::to_string(m.seed) + "\n";
  for (const auto& p : m.inputs) out += "input=" + p + "\n";
  for (const auto& p : m.outputs) out += "output=" + p + "\n";
  out += "tool_version=" + m.tool_version + "\n";
  for (const auto& n : m.notes) out += "note=" + n + "\n";
  out += "# wall-clock fields below this line differ between runs\n";
  out += "wall_seconds=" + format_double(m.wall_seconds) + "\n";
  return out;
}

}  // namespace xtrace

#endif  // XTRACE_MANIFEST_HPP_
