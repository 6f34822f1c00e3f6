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
#ifndef XTRACE_SIM_HPP_
#define XTRACE_SIM_HPP_

// Deterministic discrete-event model of an N-rank transformer training job.
//
// Every rank runs the same kind of step template: a host thread enqueues
// kernels in order onto two streams (compute and comm). A kernel starts at
// max(issue, stream predecessor end, data dependencies); a collective starts
// transferring once every member is ready and all members share its end.
// Matmuls running while a comm kernel is active on the same rank progress at
// a reduced rate. Untraced "minority" kernels occupy the compute stream but
// emit no records.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "xtrace/codec.hpp"
#include "xtrace/metrics.hpp"
#include "xtrace/ring.hpp"
#include "xtrace/trace.hpp"

namespace xtrace {

class SimError : public TraceError {
 public:
  using TraceError::TraceError;
};

struct JobConfig {
  std::string backbone = "megatron";
  std::string model = "llama";
  int world_size = 8;
  int dp = 8;
  int tp = 1;
  int pp = 1;
  int layers = 4;
  int seq_len = 4096;
  int hidden = 4096;
  int ffn_hidden = 16384;
  int dtype_bytes = 2;
  int micro_batch = 1;  // sequences per data-parallel replica per step
  int steps = 20;
  std::uint64_t seed = 1;
  double gpu_flops_nominal = 312e12;
  double link_bw_nominal = 100e9;  // bytes/sec per link
  int alignment_quantum = 128;     // bytes

  double efficiency = 0.5;          // achieved fraction of peak for aligned matmuls
  double overlap_efficiency = 0.55; // rate multiplier while a comm kernel runs
  double misalign_penalty = 0.6;    // efficiency loss for unaligned matmul dims
  double jitter_frac = 0.0;         // uniform +-fraction on kernel durations

  Micros launch_us = 10;
  Micros dataloader_us = 300;
  Micros optimizer_us = 800;
  Micros sync_us = 5;
  // Untraced kernel time per occurrence, as a fraction of one forward ffn
  // matmul. Backward occurrences take twice as long.
  double pe_frac = 0.17;
  double act_frac = 0.085;
  double norm_frac = 0.085;

  Micros heartbeat_us = 1'000'000;
  Micros hang_observe_us = 120'000'000;
  Micros max_sim_us = 100'000'000'000;

  friend bool operator==(const JobConfig&, const JobConfig&) = default;
};

inline void validate(const JobConfig& c) {
  auto fail = [](const std::string& m) { throw SimError("config: " + m); };
  if (c.world_size < 1 || c.dp < 1 || c.tp < 1 || c.pp < 1) fail("parallel degrees must be >= 1");
  if (c.dp * c.tp * c.pp != c.world_size) fail("dp*tp*pp must equal world_size");
  if (c.seq_len <= 0 || c.hidden <= 0 || c.ffn_hidden <= 0) fail("seq_len, hidden, ffn_hidden must be > 0");
  if (c.layers < 1) fail("layers must be >= 1");
  if (c.layers / c.pp == 0) fail("per-rank layer share is zero");
  if (c.hidden % c.tp != 0 || c.ffn_hidden % c.tp != 0) fail("hidden and ffn_hidden must divide by tp");
  if (c.dtype_bytes <= 0 || c.micro_batch <= 0 || c.steps < 1) fail("dtype_bytes, micro_batch, steps must be > 0");
  if (c.gpu_flops_nominal <= 0 || c.link_bw_nominal <= 0) fail("nominal rates must be > 0");
  if (c.efficiency <= 0 || c.efficiency > 1 || c.overlap_efficiency <= 0 || c.overlap_efficiency > 1) {
    fail("efficiencies must be in (0, 1]");
  }
  if (c.misalign_penalty < 0 || c.misalign_penalty >= 1) fail("misalign_penalty must be in [0, 1)");
  if (c.jitter_frac < 0 || c.jitter_frac >= 0.5) fail("jitter_frac must be in [0, 0.5)");
  if (c.alignment_quantum <= 0) fail("alignment_quantum must be > 0");
  if (c.heartbeat_us <= 0 || c.hang_observe_us <= 0 || c.max_sim_us <= 0) fail("time parameters must be > 0");
}

// ---------------------------------------------------------------------------
// Anomalies

enum class AnomalyKind {
  kGcStall,
  kExtraSync,
  kUnderclock,
  kNetworkJitter,
  kDataloaderSlow,
  kMinorityBloat,
  kLayoutMisalign,
  kCommHang,
  kProcCrash,
  kHostHang,
  kNone,
};

inline constexpr std::array<std::string_view, 11> kAnomalyKindNames = {
    "gc_stall",       "extra_sync",     "underclock",      "network_jitter",
    "dataloader_slow", "minority_bloat", "layout_misalign", "comm_hang",
    "proc_crash",     "host_hang",      "none"};

inline std::string_view to_string(AnomalyKind k) {
  return kAnomalyKindNames[static_cast<std::size_t>(k)];
}

inline std::optional<AnomalyKind> parse_anomaly_kind(std::string_view s) {
  for (std::size_t i = 0; i < kAnomalyKindNames.size(); ++i) {
    if (kAnomalyKindNames[i] == s) return static_cast<AnomalyKind>(i);
  }
  return std::nullopt;
}

// magnitude by kind:
//   gc_stall        pause length in us (period = kernel issues between pauses)
//   underclock      clock factor in (0, 1]
//   network_jitter  bandwidth factor in (0, 1]
//   dataloader_slow sequence-length ratio; loader cost grows with its square
//   minority_bloat  multiplier on the untraced op named by `op` (pe|act|norm)
//   layout_misalign efficiency penalty for unaligned matmuls, in [0, 1)
struct AnomalySpec {
  AnomalyKind kind = AnomalyKind::kNone;
  std::optional<int> target_rank;
  std::optional<RankLink> target_link;
  double magnitude = 0.0;
  int period = 0;
  int onset_step = 0;
  std::string op;

  friend bool operator==(const AnomalySpec&, const AnomalySpec&) = default;
};

inline bool is_halting(AnomalyKind k) {
  return k == AnomalyKind::kCommHang || k == AnomalyKind::kProcCrash || k == AnomalyKind::kHostHang;
}

inline void validate(const AnomalySpec& a, const JobConfig& c) {
  auto fail = [&](const std::string& m) {
    throw SimError("anomaly " + std::string(to_string(a.kind)) + ": " + m);
  };
  auto need_rank = [&] {
    if (!a.target_rank) fail("target_rank required");
    if (*a.target_rank < 0 || *a.target_rank >= c.world_size) fail("target_rank out of range");
  };
  if (a.onset_step < 0) fail("onset_step must be >= 0");
  switch (a.kind) {
    case AnomalyKind::kGcStall:
      if (a.magnitude <= 0) fail("pause must be > 0 us");
      if (a.period < 1) fail("period must be >= 1 issue");
      if (a.target_rank) need_rank();
      break;
    case AnomalyKind::kUnderclock:
      need_rank();
      if (a.magnitude <= 0 || a.magnitude > 1) fail("factor must be in (0, 1]");
      break;
    case AnomalyKind::kNetworkJitter:
      if (a.magnitude <= 0 || a.magnitude > 1) fail("factor must be in (0, 1]");
      if (a.target_link) {
        auto [x, y] = *a.target_link;
        if (x < 0 || y < 0 || x >= c.world_size || y >= c.world_size || x == y) fail("bad target_link");
      }
      break;
    case AnomalyKind::kDataloaderSlow:
      if (a.magnitude < 1) fail("ratio must be >= 1");
      break;
    case AnomalyKind::kMinorityBloat:
      if (a.op != "pe" && a.op != "act" && a.op != "norm") fail("op must be pe, act or norm");
      if (a.magnitude < 1) fail("multiplier must be >= 1");
      break;
    case AnomalyKind::kLayoutMisalign:
      if (a.magnitude < 0 || a.magnitude >= 1) fail("penalty must be in [0, 1)");
      break;
    case AnomalyKind::kCommHang:
    case AnomalyKind::kProcCrash:
    case AnomalyKind::kHostHang:
      need_rank();
      if (a.onset_step >= c.steps) fail("onset_step beyond the last step");
      break;
    case AnomalyKind::kExtraSync:
    case AnomalyKind::kNone:
      break;
  }
}

inline void validate(const std::vector<AnomalySpec>& as, const JobConfig& c) {
  int halting = 0;
  for (const auto& a : as) {
    validate(a, c);
    if (is_halting(a.kind)) ++halting;
  }
  if (halting > 1) throw SimError("anomalies: at most one hang or crash per run");
}

// ---------------------------------------------------------------------------
// Step template

enum class OpKind { kDataloader, kCompute, kGap, kCollective, kSyncHook, kStepSync };

enum class GapKind { kNone, kPe, kAct, kNorm, kOptimizer };

struct Op {
  OpKind kind = OpKind::kCompute;
  std::string name;
  std::map<std::string, std::int64_t, std::less<>> attrs;
  double work_us = 0.0;  // duration at full rate
  bool waits_comm = false;
  GapKind gap = GapKind::kNone;
  bool backward = false;
  // Collectives.
  std::vector<int> group;  // sorted global ranks
  std::int64_t bytes = 0;
  bool data_parallel = false;
};

struct StepTemplate {
  int rank = 0;
  std::vector<Op> ops;
};

struct RankCoords {
  int stage = 0;
  int dp_index = 0;
  int tp_index = 0;
};

// Tensor parallel is innermost, then data parallel, then pipeline stage.
inline RankCoords coords_of(const JobConfig& c, int rank) {
  return {rank / (c.dp * c.tp), (rank / c.tp) % c.dp, rank % c.tp};
}

inline int rank_of(const JobConfig& c, RankCoords x) {
  return x.stage * c.dp * c.tp + x.dp_index * c.tp + x.tp_index;
}

inline bool is_aligned(const JobConfig& c, std::int64_t dim) {
  return (dim * c.dtype_bytes) % c.alignment_quantum == 0;
}

// Nominal matmul duration: 2mnk / (efficiency * peak), with the layout
// penalty applied when any dimension breaks the alignment quantum.
inline double matmul_us(const JobConfig& c, std::int64_t m, std::int64_t n, std::int64_t k) {
  double eff = c.efficiency;
  if (!is_aligned(c, m) || !is_aligned(c, n) || !is_aligned(c, k)) eff *= 1.0 - c.misalign_penalty;
  return 2.0 * static_cast<double>(m) * static_cast<double>(n) * static_cast<double>(k) /
         (eff * c.gpu_flops_nominal) * 1e6;
}

inline double bus_bytes(std::string_view collective, std::int64_t bytes, std::int64_t g) {
  const double b = static_cast<double>(bytes);
  const double gd = static_cast<double>(g);
  if (collective == names::kAllreduce) return b * 2.0 * (gd - 1.0) / gd;
  if (collective == names::kAllgather || collective == names::kReduceScatter) {
    return b * (gd - 1.0) / gd;
  }
  return b;
}

inline double collective_us(const JobConfig& c, std::string_view name, std::int64_t bytes,
                            std::int64_t g) {
  return bus_bytes(name, bytes, g) / c.link_bw_nominal * 1e6;
}

namespace detail {

inline Op make_matmul(const JobConfig& c, std::int64_t m, std::int64_t n, std::int64_t k,
                      bool backward) {
  Op op;
  op.kind = OpKind::kCompute;
  op.name = std::string(names::kMatmul);
  op.attrs = {{"m", m}, {"n", n}, {"k", k}, {"dtype_bytes", c.dtype_bytes}};
  op.work_us = matmul_us(c, m, n, k);
  op.backward = backward;
  return op;
}

inline Op make_gap(double us, GapKind kind, bool backward) {
  Op op;
  op.kind = OpKind::kGap;
  op.work_us = us;
  op.gap = kind;
  op.backward = backward;
  return op;
}

inline Op make_collective(std::string_view name, std::vector<int> group, std::int64_t bytes,
                          bool backward) {
  Op op;
  op.kind = OpKind::kCollective;
  op.name = std::string(name);
  std::sort(group.begin(), group.end());
  op.group = std::move(group);
  op.bytes = bytes;
  op.backward = backward;
  return op;
}

}  // namespace detail

inline std::vector<StepTemplate> build_schedule(const JobConfig& c) {
  validate(c);
  using detail::make_collective;
  using detail::make_gap;
  using detail::make_matmul;

  const std::int64_t s = static_cast<std::int64_t>(c.seq_len) * c.micro_batch;
  const std::int64_t h = c.hidden;
  const std::int64_t ht = c.hidden / c.tp;
  const std::int64_t ft = c.ffn_hidden / c.tp;
  // Minority kernels scale with the layer, not with matmul layout quality.
  const double unit = 2.0 * static_cast<double>(s) * static_cast<double>(ft) * static_cast<double>(h) /
                      (c.efficiency * c.gpu_flops_nominal) * 1e6;
  const std::int64_t act_bytes = s * h * c.dtype_bytes;
  const std::int64_t layer_grad_bytes = (4 * h * ht + 2 * h * ft) * c.dtype_bytes;

  std::vector<StepTemplate> out;
  for (int rank = 0; rank < c.world_size; ++rank) {
    const auto me = coords_of(c, rank);
    std::vector<int> tp_group, dp_group;
    for (int t = 0; t < c.tp; ++t) tp_group.push_back(rank_of(c, {me.stage, me.dp_index, t}));
    for (int d = 0; d < c.dp; ++d) dp_group.push_back(rank_of(c, {me.stage, d, me.tp_index}));
    const int prev_stage = me.stage > 0 ? rank_of(c, {me.stage - 1, me.dp_index, me.tp_index}) : -1;
    const int next_stage =
        me.stage + 1 < c.pp ? rank_of(c, {me.stage + 1, me.dp_index, me.tp_index}) : -1;
    const int local_layers = c.layers / c.pp + (me.stage < c.layers % c.pp ? 1 : 0);

    StepTemplate tpl;
    tpl.rank = rank;
    auto& ops = tpl.ops;
    auto push_wait = [&](Op op) {
      op.waits_comm = true;
      ops.push_back(std::move(op));
    };

    Op dl;
    dl.kind = OpKind::kDataloader;
    dl.name = std::string(names::kDataloader);
    ops.push_back(dl);

    bool need_wait = false;
    auto compute = [&](Op op) {
      if (need_wait) {
        push_wait(std::move(op));
        need_wait = false;
      } else {
        ops.push_back(std::move(op));
      }
    };
    auto tp_allreduce = [&](bool backward) {
      if (c.tp > 1) {
        ops.push_back(make_collective(names::kAllreduce, tp_group, act_bytes, backward));
        need_wait = true;
      }
    };

    if (prev_stage >= 0) {
      ops.push_back(make_collective(names::kSendRecv, {prev_stage, rank}, act_bytes, false));
      need_wait = true;
    }
    for (int l = 0; l < local_layers; ++l) {
      compute(make_gap(c.norm_frac * unit, GapKind::kNorm, false));
      compute(make_matmul(c, s, 3 * ht, h, false));
      compute(make_gap(c.pe_frac * unit, GapKind::kPe, false));
      Op fa;
      fa.kind = OpKind::kCompute;
      fa.name = std::string(names::kFlashAttn);
      fa.attrs = {{"seq", s}, {"head_dim_total", ht}};
      fa.work_us = 4.0 * static_cast<double>(s) * static_cast<double>(s) * static_cast<double>(ht) /
                   (c.efficiency * c.gpu_flops_nominal) * 1e6;
      compute(fa);
      compute(make_matmul(c, s, h, ht, false));
      tp_allreduce(false);
      Op hook;
      hook.kind = OpKind::kSyncHook;
      ops.push_back(hook);
      compute(make_gap(c.norm_frac * unit, GapKind::kNorm, false));
      compute(make_matmul(c, s, ft, h, false));
      compute(make_gap(c.act_frac * unit, GapKind::kAct, false));
      compute(make_matmul(c, s, h, ft, false));
      tp_allreduce(false);
    }
    if (next_stage >= 0) {
      ops.push_back(make_collective(names::kSendRecv, {rank, next_stage}, act_bytes, false));
      ops.push_back(make_collective(names::kSendRecv, {rank, next_stage}, act_bytes, true));
      need_wait = true;
    }
    for (int l = local_layers - 1; l >= 0; --l) {
      compute(make_matmul(c, s, ft, h, true));   // ffn_down dgrad
      compute(make_matmul(c, h, ft, s, true));   // ffn_down wgrad
      compute(make_gap(2 * c.act_frac * unit, GapKind::kAct, true));
      compute(make_matmul(c, s, h, ft, true));   // ffn_up dgrad
      compute(make_matmul(c, h, ft, s, true));   // ffn_up wgrad
      tp_allreduce(true);
      compute(make_gap(2 * c.norm_frac * unit, GapKind::kNorm, true));
      compute(make_matmul(c, s, ht, h, true));   // attn_out dgrad
      compute(make_matmul(c, ht, h, s, true));   // attn_out wgrad
      Op fa;
      fa.kind = OpKind::kCompute;
      fa.name = std::string(names::kFlashAttn);
      fa.attrs = {{"seq", s}, {"head_dim_total", ht}};
      fa.work_us = 10.0 * static_cast<double>(s) * static_cast<double>(s) *
                   static_cast<double>(ht) / (c.efficiency * c.gpu_flops_nominal) * 1e6;
      fa.backward = true;
      compute(fa);
      compute(make_gap(2 * c.pe_frac * unit, GapKind::kPe, true));
      compute(make_matmul(c, s, h, 3 * ht, true));  // qkv dgrad
      compute(make_matmul(c, h, 3 * ht, s, true));  // qkv wgrad
      tp_allreduce(true);
      compute(make_gap(2 * c.norm_frac * unit, GapKind::kNorm, true));
      if (c.dp > 1) {
        auto ar = make_collective(names::kAllreduce, dp_group, layer_grad_bytes, true);
        ar.data_parallel = true;
        ops.push_back(std::move(ar));
      }
    }
    if (prev_stage >= 0) {
      ops.push_back(make_collective(names::kSendRecv, {prev_stage, rank}, act_bytes, true));
    }
    compute(make_gap(static_cast<double>(c.optimizer_us), GapKind::kOptimizer, true));
    Op sync;
    sync.kind = OpKind::kStepSync;
    ops.push_back(sync);
    out.push_back(std::move(tpl));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Simulation

struct HungRing {
  std::string name;
  std::int64_t collective_seq = 0;
  std::vector<int> group;
  RingState state;
};

struct SimOutput {
  JobInfo job;
  std::vector<StepTimeline> timelines;
  std::vector<CallStackSnapshot> stacks_at_halt;  // empty unless the run halted
  std::vector<HungRing> ring_states;              // hung collectives only
  std::vector<AnomalySpec> ground_truth;          // never part of the trace file
  bool halted = false;
  Micros end_ts = 0;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix(std::initializer_list<std::uint64_t> xs) {
  std::uint64_t h = 0x243F6A8885A308D3ULL;
  for (auto x : xs) h = splitmix64(h ^ x);
  return h;
}

// Uniform in [-1, 1).
inline double unit_noise(std::uint64_t h) {
  return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

// Time for `work` (full-rate us) starting at `start` on a rank whose comm
// stream is busy during `comm` (sorted, disjoint). Rate drops to `slow` while
// a comm kernel runs.
inline double run_with_overlap(double start, double work, const std::vector<Interval>& comm,
                               double slow) {
  double t = start;
  for (const auto& iv : comm) {
    const double cs = static_cast<double>(iv.begin);
    const double ce = static_cast<double>(iv.end);
    if (ce <= t) continue;
    if (cs > t) {
      if (work <= cs - t) return t + work;
      work -= cs - t;
      t = cs;
    }
    const double avail = (ce - t) * slow;
    if (work <= avail) return t + work / slow;
    work -= avail;
    t = ce;
  }
  return t + work;
}

}  // namespace detail

class Simulator {
 public:
  Simulator(JobConfig config, std::vector<AnomalySpec> anomalies)
      : cfg_(std::move(config)), anomalies_(std::move(anomalies)) {
    validate(cfg_);
    validate(anomalies_, cfg_);
    for (const auto& a : anomalies_) {
      if (a.kind == AnomalyKind::kLayoutMisalign) cfg_.misalign_penalty = a.magnitude;
    }
    templates_ = build_schedule(cfg_);
    assign_group_ids();
    ranks_.resize(cfg_.world_size);
    for (int r = 0; r < cfg_.world_size; ++r) ranks_[r].rank = r;
  }

  SimOutput run() {
    bool progress = true;
    while (progress) {
      progress = false;
      for (auto& rs : ranks_) {
        while (advance(rs)) progress = true;
      }
    }
    return finish();
  }

 private:
  struct Arrival {
    Micros issue = 0;
    Micros ready = 0;
  };

  struct PendingCollective {
    std::map<int, Arrival> arrivals;
  };

  struct RankState {
    int rank = 0;
    int step = 0;
    std::size_t op = 0;
    Micros host = 0;
    Micros compute_free = 0;
    Micros comm_free = 0;
    std::int64_t issues = 0;
    std::map<int, std::int64_t> ordinals;  // group id -> collectives issued
    std::vector<Interval> comm_busy;       // current step's comm intervals
    std::vector<TraceRecord> records;
    bool done = false;
    bool crashed = false;
    bool host_hung = false;
    Micros stopped_at = 0;
    // Set while waiting for the rest of a collective's group.
    std::optional<std::pair<int, std::int64_t>> waiting;
    Arrival arrival;
  };

  JobConfig cfg_;
  std::vector<AnomalySpec> anomalies_;
  std::vector<StepTemplate> templates_;
  std::map<std::vector<int>, int> group_ids_;
  std::vector<RankState> ranks_;
  std::map<std::pair<int, std::int64_t>, PendingCollective> pending_;
  std::optional<std::pair<int, std::int64_t>> hung_key_;
  std::optional<std::int64_t> hung_seq_;
  std::string hung_name_;

  void assign_group_ids() {
    for (const auto& t : templates_) {
      for (const auto& op : t.ops) {
        if (op.kind == OpKind::kCollective) group_ids_.try_emplace(op.group, 0);
      }
    }
    int id = 0;
    for (auto& [_, v] : group_ids_) v = id++;
  }

  std::int64_t seq_of(int gid, std::int64_t ordinal) const {
    return ordinal * static_cast<std::int64_t>(group_ids_.size()) + gid;
  }

  const AnomalySpec* active(AnomalyKind kind, int rank, int step) const {
    for (const auto& a : anomalies_) {
      if (a.kind != kind || step < a.onset_step) continue;
      if (a.target_rank && *a.target_rank != rank) continue;
      return &a;
    }
    return nullptr;
  }

  double jitter(std::uint64_t h) const {
    if (cfg_.jitter_frac == 0.0) return 1.0;
    return 1.0 + cfg_.jitter_frac * detail::unit_noise(h);
  }

  // Counts traced kernel issues; untraced kernels do not advance the period.
  void maybe_gc(RankState& rs) {
    ++rs.issues;
    for (const auto& a : anomalies_) {
      if (a.kind != AnomalyKind::kGcStall || rs.step < a.onset_step) continue;
      if (a.target_rank && *a.target_rank != rs.rank) continue;
      const auto phase = static_cast<std::int64_t>(
          detail::mix({cfg_.seed, 0x6c, static_cast<std::uint64_t>(rs.rank)}) %
          static_cast<std::uint64_t>(a.period));
      if ((rs.issues + phase) % a.period != 0) continue;
      TraceRecord r;
      r.rank = rs.rank;
      r.step = rs.step;
      r.kind = RecordKind::kPyApi;
      r.name = std::string(names::kGcCollect);
      r.issue_ts = r.start_ts = rs.host;
      r.end_ts = rs.host + static_cast<Micros>(std::llround(a.magnitude));
      rs.host = r.end_ts;
      rs.records.push_back(std::move(r));
    }
  }

  double compute_work(const RankState& rs, const Op& op) const {
    double w = op.work_us;
    if (op.kind == OpKind::kGap) {
      for (const auto& a : anomalies_) {
        if (a.kind != AnomalyKind::kMinorityBloat || rs.step < a.onset_step) continue;
        if ((a.op == "pe" && op.gap == GapKind::kPe) || (a.op == "act" && op.gap == GapKind::kAct) ||
            (a.op == "norm" && op.gap == GapKind::kNorm)) {
          w *= a.magnitude;
        }
      }
    }
    if (const auto* a = active(AnomalyKind::kUnderclock, rs.rank, rs.step)) w /= a->magnitude;
    w *= jitter(detail::mix({cfg_.seed, 0xc0, static_cast<std::uint64_t>(rs.rank),
                             static_cast<std::uint64_t>(rs.step), rs.op}));
    return w;
  }

  const Op& current(const RankState& rs) const { return templates_[rs.rank].ops[rs.op]; }

  void next_op(RankState& rs) {
    ++rs.op;
    if (rs.op == templates_[rs.rank].ops.size()) {
      rs.op = 0;
      ++rs.step;
      rs.comm_busy.clear();
      if (rs.step == cfg_.steps) rs.done = true;
    }
  }

  // Executes one op of `rs`. Returns false when the rank cannot move.
  bool advance(RankState& rs) {
    if (rs.done || rs.crashed || rs.host_hung) return false;
    if (rs.waiting) return false;
    const Op& op = current(rs);

    if (rs.op == 0) {
      if (active(AnomalyKind::kHostHang, rs.rank, rs.step)) {
        rs.host_hung = true;
        rs.stopped_at = rs.host;
        return false;
      }
    }
    if (const auto* a = active(AnomalyKind::kProcCrash, rs.rank, rs.step)) {
      const auto n = templates_[rs.rank].ops.size();
      const auto at = detail::mix({cfg_.seed, 0xc7, static_cast<std::uint64_t>(rs.rank)}) % n;
      if (rs.step > a->onset_step || rs.op >= at) {
        rs.crashed = true;
        rs.stopped_at = rs.host;
        return false;
      }
    }

    switch (op.kind) {
      case OpKind::kDataloader: {
        Micros dur = cfg_.dataloader_us;
        if (const auto* a = active(AnomalyKind::kDataloaderSlow, rs.rank, rs.step)) {
          dur = static_cast<Micros>(std::llround(static_cast<double>(dur) * a->magnitude * a->magnitude));
        }
        TraceRecord r;
        r.rank = rs.rank;
        r.step = rs.step;
        r.kind = RecordKind::kPyApi;
        r.name = op.name;
        r.issue_ts = r.start_ts = rs.host;
        r.end_ts = rs.host + dur;
        r.attrs = {{"samples", static_cast<std::int64_t>(cfg_.dp) * cfg_.micro_batch}};
        rs.host = r.end_ts;
        rs.records.push_back(std::move(r));
        break;
      }
      case OpKind::kCompute:
      case OpKind::kGap: {
        if (op.kind == OpKind::kCompute) maybe_gc(rs);
        const Micros issue = rs.host;
        rs.host += cfg_.launch_us;
        Micros start = std::max(issue, rs.compute_free);
        if (op.waits_comm) start = std::max(start, rs.comm_free);
        const double end_d = detail::run_with_overlap(static_cast<double>(start), compute_work(rs, op),
                                                      rs.comm_busy, cfg_.overlap_efficiency);
        const Micros end = std::max(start + 1, static_cast<Micros>(std::llround(end_d)));
        rs.compute_free = end;
        if (op.kind == OpKind::kCompute) {
          TraceRecord r;
          r.rank = rs.rank;
          r.step = rs.step;
          r.kind = RecordKind::kGpuCompute;
          r.name = op.name;
          r.issue_ts = issue;
          r.start_ts = start;
          r.end_ts = end;
          r.stream = kComputeStream;
          r.attrs = op.attrs;
          rs.records.push_back(std::move(r));
        }
        break;
      }
      case OpKind::kCollective:
        return arrive(rs, op);
      case OpKind::kSyncHook: {
        if (active(AnomalyKind::kExtraSync, rs.rank, rs.step)) {
          TraceRecord r;
          r.rank = rs.rank;
          r.step = rs.step;
          r.kind = RecordKind::kPyApi;
          r.name = std::string(names::kSynchronize);
          r.issue_ts = r.start_ts = rs.host;
          r.end_ts = std::max({rs.host, rs.compute_free, rs.comm_free}) + cfg_.sync_us;
          rs.host = r.end_ts;
          rs.records.push_back(std::move(r));
        }
        break;
      }
      case OpKind::kStepSync:
        rs.host = std::max({rs.host, rs.compute_free, rs.comm_free});
        break;
    }
    next_op(rs);
    return true;
  }

  bool arrive(RankState& rs, const Op& op) {
    maybe_gc(rs);
    const int gid = group_ids_.at(op.group);
    const auto ordinal = rs.ordinals[gid]++;
    const auto key = std::pair(gid, ordinal);
    Arrival a;
    a.issue = rs.host;
    rs.host += cfg_.launch_us;
    a.ready = std::max({a.issue, rs.comm_free, rs.compute_free});
    rs.arrival = a;
    rs.waiting = key;

    if (!hung_key_) {
      if (const auto* h = active(AnomalyKind::kCommHang, rs.rank, rs.step)) {
        if (op.name == names::kAllreduce && (op.data_parallel || cfg_.dp == 1)) {
          (void)h;
          hung_key_ = key;
          hung_seq_ = seq_of(gid, ordinal);
          hung_name_ = op.name;
        }
      }
    }
    auto& p = pending_[key];
    p.arrivals[rs.rank] = a;
    if (p.arrivals.size() < op.group.size()) return true;
    if (hung_key_ && *hung_key_ == key) return true;
    resolve(key, op);
    return true;
  }

  void resolve(std::pair<int, std::int64_t> key, const Op& op) {
    auto& p = pending_.at(key);
    Micros t0 = 0;
    for (const auto& [_, a] : p.arrivals) t0 = std::max(t0, a.ready);
    const int step = ranks_[op.group.front()].step;
    double bw = cfg_.link_bw_nominal;
    for (const auto& an : anomalies_) {
      if (an.kind != AnomalyKind::kNetworkJitter || step < an.onset_step) continue;
      if (an.target_link) {
        const bool has_a = std::binary_search(op.group.begin(), op.group.end(), an.target_link->first);
        const bool has_b = std::binary_search(op.group.begin(), op.group.end(), an.target_link->second);
        if (!(has_a && has_b)) continue;
      }
      bw *= an.magnitude;
    }
    const auto g = static_cast<std::int64_t>(op.group.size());
    double dur = bus_bytes(op.name, op.bytes, g) / bw * 1e6;
    dur *= jitter(detail::mix({cfg_.seed, 0xcc, static_cast<std::uint64_t>(key.first),
                               static_cast<std::uint64_t>(key.second)}));
    const Micros end = t0 + std::max<Micros>(1, static_cast<Micros>(std::llround(dur)));
    const auto seq = seq_of(key.first, key.second);
    for (const auto& [rank, a] : p.arrivals) {
      auto& rs = ranks_[rank];
      TraceRecord r;
      r.rank = rank;
      r.step = rs.step;
      r.kind = RecordKind::kGpuComm;
      r.name = op.name;
      r.issue_ts = a.issue;
      r.start_ts = a.ready;
      r.end_ts = end;
      r.stream = kCommStream;
      r.attrs = {{"bytes", op.bytes}, {"group_size", g}, {"collective_seq", seq}};
      rs.records.push_back(std::move(r));
      rs.comm_free = end;
      rs.comm_busy.push_back({a.ready, end});
      rs.waiting.reset();
      next_op(rs);
    }
    pending_.erase(key);
  }

  Micros rank_clock(const RankState& rs) const {
    if (rs.crashed || rs.host_hung) return rs.stopped_at;
    return std::max({rs.host, rs.compute_free, rs.comm_free});
  }

  SimOutput finish() {
    SimOutput out;
    out.job = JobInfo{cfg_.backbone, cfg_.world_size, cfg_.model,
                      static_cast<std::int64_t>(cfg_.dp) * cfg_.micro_batch};
    out.ground_truth = anomalies_;
    bool all_done = true;
    Micros last = 0;
    for (const auto& rs : ranks_) {
      all_done = all_done && rs.done;
      last = std::max(last, rank_clock(rs));
      for (const auto& r : rs.records) last = std::max(last, r.end_ts);
    }
    if (last > cfg_.max_sim_us) {
      throw SimError("simulation exceeded the time budget of " + std::to_string(cfg_.max_sim_us) + " us");
    }
    out.halted = !all_done;
    if (out.halted) {
      bool injected = false;
      for (const auto& a : anomalies_) injected = injected || is_halting(a.kind);
      if (!injected) throw SimError("simulation deadlocked without an injected hang");
      out.end_ts = last + cfg_.hang_observe_us;
      build_halt_state(out);
    } else {
      out.end_ts = last;
    }

    std::vector<TraceRecord> all;
    for (auto& rs : ranks_) {
      // Heartbeats run until the observation point, except on crashed ranks.
      const Micros hb_end = rs.crashed ? rs.stopped_at : (out.halted ? out.end_ts : rank_clock(rs));
      std::vector<Micros> dl_issue;
      for (const auto& r : rs.records) {
        if (r.name == names::kDataloader) dl_issue.push_back(r.issue_ts);
      }
      for (Micros ts = cfg_.heartbeat_us; ts <= hb_end; ts += cfg_.heartbeat_us) {
        auto it = std::upper_bound(dl_issue.begin(), dl_issue.end(), ts);
        const int step = std::max<int>(0, static_cast<int>(it - dl_issue.begin()) - 1);
        TraceRecord hb;
        hb.rank = rs.rank;
        hb.step = step;
        hb.kind = RecordKind::kHeartbeat;
        hb.name = std::string(names::kHeartbeat);
        hb.issue_ts = hb.start_ts = hb.end_ts = ts;
        rs.records.push_back(std::move(hb));
      }
      all.insert(all.end(), std::make_move_iterator(rs.records.begin()),
                 std::make_move_iterator(rs.records.end()));
      rs.records.clear();
    }
    out.timelines = group_timelines(std::move(all));
    return out;
  }

  void build_halt_state(SimOutput& out) {
    for (const auto& rs : ranks_) {
      CallStackSnapshot s;
      s.rank = rs.rank;
      s.captured_ts = out.end_ts;
      if (rs.crashed) {
        s.present = false;
      } else if (rs.host_hung) {
        s.frames = {"checkpoint.write", "save_checkpoint", "train_step", "main"};
      } else if (rs.waiting) {
        const Op& op = current(rs);
        s.frames = {op.name, op.backward ? "backward" : "forward", "train_step", "main"};
        s.collective_seq = seq_of(rs.waiting->first, rs.waiting->second);
      } else {
        s.frames = {"train_step_end", "main"};
      }
      out.stacks_at_halt.push_back(std::move(s));
    }
    if (!hung_key_) return;
    const auto* hang = [&]() -> const AnomalySpec* {
      for (const auto& a : anomalies_) {
        if (a.kind == AnomalyKind::kCommHang) return &a;
      }
      return nullptr;
    }();
    std::vector<int> group;
    for (const auto& [g, id] : group_ids_) {
      if (id == hung_key_->first) group = g;
    }
    RingConfig rc;
    rc.n_ranks = static_cast<int>(group.size());
    rc.n_channels = 2;
    rc.fifo_depth = 2;
    rc.chunks = std::max(16, min_chunks(rc.n_ranks, rc.fifo_depth));
    rc.protocol = Protocol::kSimple;
    rc.threads_per_block = 256;
    const auto total = total_steps(rc);
    const int pos = static_cast<int>(
        std::find(group.begin(), group.end(), *hang->target_rank) - group.begin());
    // Freeze somewhere after warm-up and before completion.
    const std::int64_t lo = rc.fifo_depth + 1;
    const std::int64_t span = std::max<std::int64_t>(1, total - lo);
    const std::int64_t t = lo + static_cast<std::int64_t>(
                                    detail::mix({cfg_.seed, 0x71}) % static_cast<std::uint64_t>(span));
    auto state = ring_run_until(ring_init(rc), pos, t);
    state = ring_advance(ring_freeze(std::move(state), pos));
    out.ring_states.push_back({hung_name_, *hung_seq_, group, std::move(state)});
  }
};

inline SimOutput simulate(const JobConfig& config, const std::vector<AnomalySpec>& anomalies) {
  return Simulator(config, anomalies).run();
}

// Trace file as a tracing daemon would emit it: no ground truth.
inline TraceFile to_trace_file(const SimOutput& out) {
  TraceFile f;
  f.job = out.job;
  f.records = flatten(out.timelines);
  f.stacks = out.stacks_at_halt;
  for (const auto& h : out.ring_states) {
    f.hung.push_back({h.name, h.collective_seq, h.group, ring_snapshot(h.state, h.state.config.protocol)});
  }
  return f;
}

// ---------------------------------------------------------------------------
// Text forms. Config files hold `key=value` lines for JobConfig fields plus
// `anomaly ...` lines in the truth-file format; '#' starts a comment.

inline std::string encode_anomaly(const AnomalySpec& a) {
  std::string line = "kind=" + std::string(to_string(a.kind));
  line += " target_rank=" + (a.target_rank ? format_int(*a.target_rank) : std::string("-"));
  line += " target_link=" + (a.target_link ? format_int(a.target_link->first) + "-" +
                                                 format_int(a.target_link->second)
                                           : std::string("-"));
  line += " magnitude=" + format_double(a.magnitude);
  line += " period=" + format_int(a.period);
  line += " onset_step=" + format_int(a.onset_step);
  line += " op=" + (a.op.empty() ? std::string("-") : a.op);
  return line;
}

inline AnomalySpec decode_anomaly(std::string_view line) {
  const detail::Fields f(line);
  AnomalySpec a;
  const auto kind = parse_anomaly_kind(f.str("kind"));
  if (!kind) throw SimError("anomaly: unknown kind '" + std::string(f.str("kind")) + "'");
  a.kind = *kind;
  auto opt_str = [&](std::string_view k) -> std::optional<std::string_view> {
    auto v = f.find(k);
    if (!v || *v == "-") return std::nullopt;
    return v;
  };
  if (auto v = opt_str("target_rank")) {
    auto r = parse_int(*v);
    if (!r) throw SimError("anomaly: bad target_rank");
    a.target_rank = static_cast<int>(*r);
  }
  if (auto v = opt_str("target_link")) {
    const auto dash = v->find('-', 1);
    auto x = dash == std::string_view::npos ? std::nullopt : parse_int(v->substr(0, dash));
    auto y = dash == std::string_view::npos ? std::nullopt : parse_int(v->substr(dash + 1));
    if (!x || !y) throw SimError("anomaly: bad target_link");
    a.target_link = RankLink{static_cast<int>(*x), static_cast<int>(*y)};
  }
  if (f.find("magnitude")) a.magnitude = f.real("magnitude");
  if (f.find("period")) a.period = static_cast<int>(f.integer("period"));
  if (f.find("onset_step")) a.onset_step = static_cast<int>(f.integer("onset_step"));
  if (auto v = opt_str("op")) a.op = std::string(*v);
  return a;
}

// An anomaly-free run is recorded as a single `kind=none` line.
inline std::string encode_truth(const std::vector<AnomalySpec>& as) {
  if (as.empty()) return encode_anomaly(AnomalySpec{}) + "\n";
  std::string out;
  for (const auto& a : as) out += encode_anomaly(a) + "\n";
  return out;
}

inline std::vector<AnomalySpec> decode_truth(std::string_view text) {
  std::vector<AnomalySpec> out;
  for (auto line : split(text, '\n')) {
    if (!line.empty()) out.push_back(decode_anomaly(line));
  }
  return out;
}

namespace detail {

template <typename F>
void for_each_config_field(JobConfig& c, F&& f) {
  f("backbone", c.backbone);
  f("model", c.model);
  f("world_size", c.world_size);
  f("dp", c.dp);
  f("tp", c.tp);
  f("pp", c.pp);
  f("layers", c.layers);
  f("seq_len", c.seq_len);
  f("hidden", c.hidden);
  f("ffn_hidden", c.ffn_hidden);
  f("dtype_bytes", c.dtype_bytes);
  f("micro_batch", c.micro_batch);
  f("steps", c.steps);
  f("seed", c.seed);
  f("gpu_flops_nominal", c.gpu_flops_nominal);
  f("link_bw_nominal", c.link_bw_nominal);
  f("alignment_quantum", c.alignment_quantum);
  f("efficiency", c.efficiency);
  f("overlap_efficiency", c.overlap_efficiency);
  f("misalign_penalty", c.misalign_penalty);
  f("jitter_frac", c.jitter_frac);
  f("launch_us", c.launch_us);
  f("dataloader_us", c.dataloader_us);
  f("optimizer_us", c.optimizer_us);
  f("sync_us", c.sync_us);
  f("pe_frac", c.pe_frac);
  f("act_frac", c.act_frac);
  f("norm_frac", c.norm_frac);
  f("heartbeat_us", c.heartbeat_us);
  f("hang_observe_us", c.hang_observe_us);
  f("max_sim_us", c.max_sim_us);
}

}  // namespace detail

inline std::string encode_config(const JobConfig& config) {
  JobConfig c = config;
  std::string out;
  detail::for_each_config_field(c, [&](std::string_view k, auto& v) {
    using T = std::decay_t<decltype(v)>;
    out += std::string(k) + "=";
    if constexpr (std::is_same_v<T, std::string>) {
      out += v;
    } else if constexpr (std::is_floating_point_v<T>) {
      out += format_double(v);
    } else {
      out += std::to_string(v);
    }
    out += "\n";
  });
  return out;
}

struct ConfigFile {
  JobConfig config;
  std::vector<AnomalySpec> anomalies;
};

inline ConfigFile parse_config(std::string_view text) {
  ConfigFile out;
  int line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\r')) line.remove_suffix(1);
    while (!line.empty() && line.front() == ' ') line.remove_prefix(1);
    if (line.empty()) continue;
    const auto where = "config line " + std::to_string(line_no) + ": ";
    try {
      if (line.substr(0, 8) == "anomaly ") {
        out.anomalies.push_back(decode_anomaly(line.substr(8)));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw SimError("expected key=value");
      const auto key = line.substr(0, eq);
      const auto val = line.substr(eq + 1);
      bool found = false;
      detail::for_each_config_field(out.config, [&](std::string_view k, auto& v) {
        if (k != key) return;
        found = true;
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::string>) {
          detail::require_token(val, k);
          v = std::string(val);
        } else if constexpr (std::is_floating_point_v<T>) {
          auto d = parse_double(val);
          if (!d) throw SimError("bad number for " + std::string(k));
          v = *d;
        } else {
          auto i = parse_int(val);
          if (!i || (std::is_unsigned_v<T> && *i < 0)) throw SimError("bad integer for " + std::string(k));
          v = static_cast<T>(*i);
        }
      });
      if (!found) throw SimError("unknown key '" + std::string(key) + "'");
    } catch (const TraceError& e) {
      throw SimError(where + e.what());
    }
  }
  validate(out.config);
  validate(out.anomalies, out.config);
  return out;
}

// ---------------------------------------------------------------------------
// Scenario catalog

struct Scenario {
  std::string name;
  JobConfig config;
  std::vector<AnomalySpec> anomalies;
};

inline constexpr int kScenarioRanks = 8;

inline std::vector<std::string> scenario_catalog() {
  std::vector<std::string> out = {"healthy",           "unhealthy_gc",       "unhealthy_sync",
                                  "underclock_14pct",  "layout_misalign",    "layout_padded",
                                  "dataloader_seq64k", "minority_bloat_pe",  "minority_bloat_act",
                                  "minority_bloat_norm", "gdr_down"};
  for (const char* prefix : {"comm_hang_rank_", "crash_rank_", "hang_noncomm_rank_"}) {
    for (int k = 0; k < kScenarioRanks; ++k) out.push_back(prefix + std::to_string(k));
  }
  return out;
}

namespace detail {

inline JobConfig scenario_base(std::uint64_t seed) {
  JobConfig c;
  c.model = "llama-8l";
  c.world_size = kScenarioRanks;
  c.dp = 4;
  c.tp = 2;
  c.layers = 8;
  c.steps = 20;
  c.jitter_frac = 0.01;
  c.seed = seed;
  return c;
}

inline std::optional<int> rank_suffix(std::string_view name, std::string_view prefix) {
  if (name.substr(0, std::min(name.size(), prefix.size())) != prefix) return std::nullopt;
  auto k = parse_int(name.substr(prefix.size()));
  if (!k || *k < 0 || *k >= kScenarioRanks) return std::nullopt;
  return static_cast<int>(*k);
}

}  // namespace detail

inline Scenario scenario(std::string_view name, std::uint64_t seed = 1) {
  Scenario s;
  s.name = std::string(name);
  s.config = detail::scenario_base(seed);
  auto add = [&](AnomalyKind kind) -> AnomalySpec& {
    AnomalySpec a;
    a.kind = kind;
    s.anomalies.push_back(a);
    return s.anomalies.back();
  };
  auto bloat = [&](const char* op, double m) {
    auto& a = add(AnomalyKind::kMinorityBloat);
    a.op = op;
    a.magnitude = m;
  };

  if (name == "healthy") {
  } else if (name == "unhealthy_gc") {
    auto& a = add(AnomalyKind::kGcStall);
    a.magnitude = 60'000;
    a.period = 50;
  } else if (name == "unhealthy_sync") {
    add(AnomalyKind::kExtraSync);
  } else if (name == "underclock_14pct") {
    auto& a = add(AnomalyKind::kUnderclock);
    a.target_rank = 3;
    a.magnitude = 0.84;
    a.onset_step = 8;
  } else if (name == "layout_misalign" || name == "layout_padded") {
    s.config.dp = 2;
    s.config.tp = 4;
    s.config.ffn_hidden = name == "layout_misalign" ? 33936 : 34048;
    s.config.model = "llama-ffn" + std::to_string(s.config.ffn_hidden);
    if (name == "layout_misalign") add(AnomalyKind::kLayoutMisalign).magnitude = s.config.misalign_penalty;
  } else if (name == "dataloader_seq64k") {
    add(AnomalyKind::kDataloaderSlow).magnitude = 16.0;  // 64k vs 4k tokens
  } else if (name == "minority_bloat_pe") {
    bloat("pe", 2.5);
  } else if (name == "minority_bloat_act") {
    bloat("act", 4.65);
  } else if (name == "minority_bloat_norm") {
    bloat("norm", 8.15);
  } else if (name == "gdr_down") {
    auto& a = add(AnomalyKind::kNetworkJitter);
    a.magnitude = 0.2;
    a.onset_step = 2;
  } else {
    std::optional<int> k;
    AnomalyKind kind = AnomalyKind::kNone;
    if ((k = detail::rank_suffix(name, "comm_hang_rank_"))) {
      kind = AnomalyKind::kCommHang;
    } else if ((k = detail::rank_suffix(name, "crash_rank_"))) {
      kind = AnomalyKind::kProcCrash;
    } else if ((k = detail::rank_suffix(name, "hang_noncomm_rank_"))) {
      kind = AnomalyKind::kHostHang;
    }
    if (!k) {
      std::string names;
      for (const auto& n : scenario_catalog()) names += (names.empty() ? "" : ",") + n;
      throw SimError("unknown scenario '" + std::string(name) + "'; catalog: " + names);
    }
    s.config.dp = kScenarioRanks;
    s.config.tp = 1;
    s.config.model = "llama-8l-dp";
    auto& a = add(kind);
    a.target_rank = *k;
    a.onset_step = 4;
  }
  return s;
}

}  // namespace xtrace

#endif  // XTRACE_SIM_HPP_
