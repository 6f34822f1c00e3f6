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
#ifndef XTRACE_TRACE_HPP_
#define XTRACE_TRACE_HPP_

// Trace data model: one timed event per TraceRecord, grouped per (rank, step)
// into StepTimelines. Timestamps are integer microseconds from job start.

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

namespace xtrace {

using Micros = std::int64_t;

class TraceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class RecordKind { kPyApi, kGpuCompute, kGpuComm, kHeartbeat };

inline constexpr std::array<std::string_view, 4> kRecordKindNames = {
    "py_api", "gpu_compute", "gpu_comm", "heartbeat"};

inline std::string_view to_string(RecordKind kind) {
  return kRecordKindNames[static_cast<std::size_t>(kind)];
}

inline std::optional<RecordKind> parse_record_kind(std::string_view s) {
  for (std::size_t i = 0; i < kRecordKindNames.size(); ++i) {
    if (kRecordKindNames[i] == s) return static_cast<RecordKind>(i);
  }
  return std::nullopt;
}

// Streams used by the simulator; host-side records use kHostStream.
inline constexpr int kHostStream = -1;
inline constexpr int kComputeStream = 0;
inline constexpr int kCommStream = 1;

inline int default_stream(RecordKind kind) {
  switch (kind) {
    case RecordKind::kGpuCompute:
      return kComputeStream;
    case RecordKind::kGpuComm:
      return kCommStream;
    case RecordKind::kPyApi:
    case RecordKind::kHeartbeat:
      return kHostStream;
  }
  return kHostStream;
}

namespace names {
inline constexpr std::string_view kDataloader = "dataloader.next";
inline constexpr std::string_view kGcCollect = "gc.collect";
inline constexpr std::string_view kSynchronize = "cuda.synchronize";
inline constexpr std::string_view kMatmul = "matmul";
inline constexpr std::string_view kFlashAttn = "flash_attn";
inline constexpr std::string_view kHeartbeat = "heartbeat";
inline constexpr std::string_view kAllreduce = "allreduce";
inline constexpr std::string_view kAllgather = "allgather";
inline constexpr std::string_view kReduceScatter = "reduce_scatter";
inline constexpr std::string_view kBroadcast = "broadcast";
inline constexpr std::string_view kSendRecv = "sendrecv";
inline constexpr std::string_view kBarrier = "barrier";
}  // namespace names

inline bool is_comm_function(std::string_view name) {
  return name == names::kAllreduce || name == names::kAllgather ||
         name == names::kReduceScatter || name == names::kBroadcast ||
         name == names::kSendRecv || name == names::kBarrier;
}

struct TraceRecord {
  int rank = 0;
  int step = 0;
  RecordKind kind = RecordKind::kPyApi;
  std::string name;
  Micros issue_ts = 0;
  Micros start_ts = 0;
  Micros end_ts = 0;
  int stream = kHostStream;
  // Kind-specific integer attributes, e.g. m/n/k/dtype_bytes for matmul and
  // bytes/group_size/collective_seq for collectives.
  std::map<std::string, std::int64_t, std::less<>> attrs;

  std::optional<std::int64_t> attr(std::string_view key) const {
    auto it = attrs.find(key);
    if (it == attrs.end()) return std::nullopt;
    return it->second;
  }

  std::int64_t attr_or(std::string_view key, std::int64_t fallback) const {
    return attr(key).value_or(fallback);
  }

  bool is_gpu() const {
    return kind == RecordKind::kGpuCompute || kind == RecordKind::kGpuComm;
  }

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

struct StepTimeline {
  int rank = 0;
  int step = 0;
  std::vector<TraceRecord> records;
  Micros step_begin_ts = 0;
  Micros step_end_ts = 0;

  friend bool operator==(const StepTimeline&, const StepTimeline&) = default;
};

struct CallStackSnapshot {
  int rank = 0;
  std::vector<std::string> frames;  // innermost first
  Micros captured_ts = 0;
  bool present = true;
  // Sequence number of the collective the rank is blocked in, if any.
  std::optional<std::int64_t> collective_seq;

  friend bool operator==(const CallStackSnapshot&,
                         const CallStackSnapshot&) = default;
};

enum class AnomalyClass {
  kHangNonComm,
  kHangComm,
  kCrash,
  kThroughputDrop,
  kUnderclockedGpu,
  kUnoptimizedKernel,
  kSlowLink,
  kKernelIssueStall,
  kInterstepOverhead,
  kMinorityKernelBloat,
  kIndeterminate,
};

inline constexpr std::array<std::string_view, 11> kAnomalyClassNames = {
    "hang_noncomm",       "hang_comm",          "crash",
    "throughput_drop",    "underclocked_gpu",   "unoptimized_kernel",
    "slow_link",          "kernel_issue_stall", "interstep_overhead",
    "minority_kernel_bloat", "indeterminate"};

inline std::string_view to_string(AnomalyClass c) {
  return kAnomalyClassNames[static_cast<std::size_t>(c)];
}

inline std::optional<AnomalyClass> parse_anomaly_class(std::string_view s) {
  for (std::size_t i = 0; i < kAnomalyClassNames.size(); ++i) {
    if (kAnomalyClassNames[i] == s) return static_cast<AnomalyClass>(i);
  }
  return std::nullopt;
}

enum class Team { kAlgorithm, kInfrastructure, kOperations };

inline constexpr std::array<std::string_view, 3> kTeamNames = {
    "algorithm", "infrastructure", "operations"};

inline std::string_view to_string(Team t) {
  return kTeamNames[static_cast<std::size_t>(t)];
}

inline std::optional<Team> parse_team(std::string_view s) {
  for (std::size_t i = 0; i < kTeamNames.size(); ++i) {
    if (kTeamNames[i] == s) return static_cast<Team>(i);
  }
  return std::nullopt;
}

// Ordered weakest to strongest.
enum class Confidence { kIndeterminate, kProbable, kDefinite };

inline constexpr std::array<std::string_view, 3> kConfidenceNames = {
    "indeterminate", "probable", "definite"};

inline std::string_view to_string(Confidence c) {
  return kConfidenceNames[static_cast<std::size_t>(c)];
}

inline std::optional<Confidence> parse_confidence(std::string_view s) {
  for (std::size_t i = 0; i < kConfidenceNames.size(); ++i) {
    if (kConfidenceNames[i] == s) return static_cast<Confidence>(i);
  }
  return std::nullopt;
}

// Metric family a report originates from; also the secondary sort key.
enum class Family { kHang, kFlops, kBandwidth, kIssueLatency, kVoid, kThroughput };

inline constexpr std::array<std::string_view, 6> kFamilyNames = {
    "hang", "flops", "bandwidth", "issue_latency", "void", "throughput"};

inline std::string_view to_string(Family f) {
  return kFamilyNames[static_cast<std::size_t>(f)];
}

inline std::optional<Family> parse_family(std::string_view s) {
  for (std::size_t i = 0; i < kFamilyNames.size(); ++i) {
    if (kFamilyNames[i] == s) return static_cast<Family>(i);
  }
  return std::nullopt;
}

using RankLink = std::pair<int, int>;

struct AnomalyReport {
  AnomalyClass anomaly = AnomalyClass::kIndeterminate;
  std::set<int> implicated_ranks;
  std::set<RankLink> implicated_links;
  Team attribution = Team::kOperations;
  // Extra teams notified alongside the owner (GC-like stalls).
  std::set<Team> also_notify;
  std::map<std::string, double, std::less<>> evidence;
  Confidence confidence = Confidence::kProbable;
  Family family = Family::kHang;
  int step = -1;  // first step showing the evidence; -1 when job-wide

  friend bool operator==(const AnomalyReport&, const AnomalyReport&) = default;
};

// Owning team per anomaly class. kKernelIssueStall defaults to algorithm
// (unnecessary sync); the engine overrides it for GC-like signatures.
inline Team default_attribution(AnomalyClass c) {
  switch (c) {
    case AnomalyClass::kHangNonComm:
    case AnomalyClass::kHangComm:
    case AnomalyClass::kCrash:
    case AnomalyClass::kUnderclockedGpu:
    case AnomalyClass::kSlowLink:
    case AnomalyClass::kThroughputDrop:
    case AnomalyClass::kIndeterminate:
      return Team::kOperations;
    case AnomalyClass::kUnoptimizedKernel:
    case AnomalyClass::kMinorityKernelBloat:
      return Team::kInfrastructure;
    case AnomalyClass::kKernelIssueStall:
    case AnomalyClass::kInterstepOverhead:
      return Team::kAlgorithm;
  }
  return Team::kOperations;
}

// ---------------------------------------------------------------------------
// Number formatting shared by every text format: decimal, never exponent.

inline std::string format_int(std::int64_t v) { return std::to_string(v); }

inline std::string format_double(double v) {
  if (v == 0.0) return "0";
  std::array<char, 400> buf{};
  auto [ptr, ec] =
      std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::fixed);
  if (ec != std::errc()) throw TraceError("cannot format number");
  return std::string(buf.data(), ptr);
}

inline std::optional<std::int64_t> parse_int(std::string_view s) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v,
                                   std::chars_format::fixed);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  if (s.empty()) return out;
  std::size_t pos = 0;
  while (true) {
    auto next = s.find(sep, pos);
    if (next == std::string_view::npos) {
      out.push_back(s.substr(pos));
      break;
    }
    out.push_back(s.substr(pos, next - pos));
    pos = next + 1;
  }
  return out;
}

// Groups flat records into per-(rank, step) timelines. Step boundaries come
// from each step's dataloader.next issue time; the last step of a rank ends at
// its latest record end.
inline std::vector<StepTimeline> group_timelines(std::vector<TraceRecord> records) {
  std::stable_sort(records.begin(), records.end(),
                   [](const TraceRecord& a, const TraceRecord& b) {
                     if (a.rank != b.rank) return a.rank < b.rank;
                     if (a.step != b.step) return a.step < b.step;
                     if (a.issue_ts != b.issue_ts) return a.issue_ts < b.issue_ts;
                     return a.name == names::kDataloader && b.name != names::kDataloader;
                   });
  std::vector<StepTimeline> out;
  for (auto& r : records) {
    if (out.empty() || out.back().rank != r.rank || out.back().step != r.step) {
      StepTimeline t;
      t.rank = r.rank;
      t.step = r.step;
      t.step_begin_ts = r.issue_ts;
      out.push_back(std::move(t));
    }
    auto& t = out.back();
    if (r.name == names::kDataloader) t.step_begin_ts = r.issue_ts;
    t.records.push_back(std::move(r));
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& t = out[i];
    Micros last_end = t.step_begin_ts;
    for (const auto& r : t.records) last_end = std::max(last_end, r.end_ts);
    t.step_end_ts = last_end;
    if (i + 1 < out.size() && out[i + 1].rank == t.rank) {
      for (const auto& r : out[i + 1].records) {
        if (r.name == names::kDataloader) {
          t.step_end_ts = std::max(last_end, r.issue_ts);
          break;
        }
      }
    }
  }
  return out;
}

inline std::vector<TraceRecord> flatten(const std::vector<StepTimeline>& timelines) {
  std::vector<TraceRecord> out;
  for (const auto& t : timelines) out.insert(out.end(), t.records.begin(), t.records.end());
  return out;
}

}  // namespace xtrace

#endif  // XTRACE_TRACE_HPP_
