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
#ifndef XTRACE_TESTS_FIXTURES_HPP_
#define XTRACE_TESTS_FIXTURES_HPP_

#include <cstdint>

#include "xtrace/baseline.hpp"
#include "xtrace/diagnostics.hpp"
#include "xtrace/sim.hpp"

namespace xtrace::testing {

// Data-parallel job on a slow link: the per-layer gradient allreduce covers
// the next layer's backward matmuls completely.
inline JobConfig overlap_config(std::uint64_t seed = 1) {
  JobConfig c;
  c.model = "llama-4l-slowlink";
  c.world_size = c.dp = 8;
  c.layers = 4;
  c.steps = 10;
  c.link_bw_nominal = 10e9;
  c.jitter_frac = 0.01;
  c.seed = seed;
  return c;
}

inline BaselineKey key_of(const JobConfig& c) { return {c.backbone, c.world_size, c.model}; }

// Baseline recorded from an anomaly-free run of `config` under another seed.
inline BaselineProfile healthy_baseline(JobConfig config, std::uint64_t seed = 1001) {
  config.seed = seed;
  return baseline_record(simulate(config, {}).timelines, key_of(config));
}

inline DiagnoseInput input_for(const SimOutput& out, std::optional<BaselineProfile> baseline = {}) {
  const auto file = to_trace_file(out);
  DiagnoseInput in;
  in.timelines = group_timelines(file.records);
  in.stacks = file.stacks;
  in.hung = file.hung;
  in.baseline = std::move(baseline);
  return in;
}

inline DiagnoseResult run_scenario(const Scenario& s, std::optional<BaselineProfile> baseline = {}) {
  return diagnose(input_for(simulate(s.config, s.anomalies), std::move(baseline)));
}

struct Expected {
  AnomalyClass anomaly = AnomalyClass::kIndeterminate;
  Team attribution = Team::kOperations;
  bool localizable = false;
};

// Report expected for an injected anomaly kind.
inline std::optional<Expected> expected_for(AnomalyKind kind) {
  switch (kind) {
    case AnomalyKind::kGcStall:
      return Expected{AnomalyClass::kKernelIssueStall, Team::kInfrastructure, false};
    case AnomalyKind::kExtraSync:
      return Expected{AnomalyClass::kKernelIssueStall, Team::kAlgorithm, false};
    case AnomalyKind::kUnderclock:
      return Expected{AnomalyClass::kUnderclockedGpu, Team::kOperations, true};
    case AnomalyKind::kNetworkJitter:
      return Expected{AnomalyClass::kSlowLink, Team::kOperations, false};
    case AnomalyKind::kDataloaderSlow:
      return Expected{AnomalyClass::kInterstepOverhead, Team::kAlgorithm, false};
    case AnomalyKind::kMinorityBloat:
      return Expected{AnomalyClass::kMinorityKernelBloat, Team::kInfrastructure, false};
    case AnomalyKind::kLayoutMisalign:
      return Expected{AnomalyClass::kUnoptimizedKernel, Team::kInfrastructure, false};
    case AnomalyKind::kCommHang:
      return Expected{AnomalyClass::kHangComm, Team::kOperations, true};
    case AnomalyKind::kProcCrash:
      return Expected{AnomalyClass::kCrash, Team::kOperations, true};
    case AnomalyKind::kHostHang:
      return Expected{AnomalyClass::kHangNonComm, Team::kOperations, true};
    case AnomalyKind::kNone:
      break;
  }
  return std::nullopt;
}

}  // namespace xtrace::testing

#endif  // XTRACE_TESTS_FIXTURES_HPP_
