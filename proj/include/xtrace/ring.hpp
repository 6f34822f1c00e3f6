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
#ifndef XTRACE_RING_HPP_
#define XTRACE_RING_HPP_

// Step-level model of a chunked ring-allreduce. Each (rank, channel) pair owns
// a send counter and a receive counter; a hung collective is localized from a
// snapshot of those counters, the same way a debugger dump of the per-block
// loop-step registers would be read.
//
// Transition rule for rank r on channel c (next = (r + 1) % n):
//   * r has joined the collective and is not frozen,
//   * send[r] < total_steps,
//   * send[r] < recv[r] + 1      (a step can only forward data already held),
//   * send[r] - recv[next] < fifo_depth   (bounded in-flight slots).
// A send is delivered immediately unless the receiver is frozen.

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string_view>
#include <vector>

#include "xtrace/trace.hpp"

namespace xtrace {

enum class Protocol { kSimple, kLL, kLL128 };

inline constexpr std::array<std::string_view, 3> kProtocolNames = {"SIMPLE", "LL",
                                                                   "LL128"};

inline std::string_view to_string(Protocol p) {
  return kProtocolNames[static_cast<std::size_t>(p)];
}

inline std::optional<Protocol> parse_protocol(std::string_view s) {
  for (std::size_t i = 0; i < kProtocolNames.size(); ++i) {
    if (kProtocolNames[i] == s) return static_cast<Protocol>(i);
  }
  return std::nullopt;
}

struct RingConfig {
  int n_ranks = 2;
  int n_channels = 1;
  int chunks = 8;
  int fifo_depth = 1;
  Protocol protocol = Protocol::kSimple;
  int threads_per_block = 256;

  friend bool operator==(const RingConfig&, const RingConfig&) = default;
};

// Smallest chunk count for which a frozen rank is the strict minimum of the
// quiescent send counters.
inline int min_chunks(int n_ranks, int fifo_depth) { return n_ranks + fifo_depth + 2; }

inline void validate(const RingConfig& c) {
  if (c.n_ranks < 2) throw TraceError("ring: n_ranks must be >= 2");
  if (c.n_channels < 1) throw TraceError("ring: n_channels must be >= 1");
  if (c.fifo_depth < 1) throw TraceError("ring: fifo_depth must be >= 1");
  if (c.threads_per_block < 1) throw TraceError("ring: threads_per_block must be >= 1");
  if (c.chunks < min_chunks(c.n_ranks, c.fifo_depth)) {
    throw TraceError("ring: chunks must be >= n_ranks + fifo_depth + 2");
  }
}

// Reduce-scatter plus allgather: 2(n-1) steps per round of n chunks.
inline std::int64_t total_steps(const RingConfig& c) {
  const std::int64_t rounds = (c.chunks + c.n_ranks - 1) / c.n_ranks;
  return 2 * static_cast<std::int64_t>(c.n_ranks - 1) * rounds;
}

struct RingState {
  RingConfig config;
  // Indexed rank * n_channels + channel.
  std::vector<std::int64_t> send_step;
  std::vector<std::int64_t> recv_step;
  std::set<int> frozen;
  bool joined = false;
  bool quiescent = false;

  std::size_t index(int rank, int channel) const {
    return static_cast<std::size_t>(rank) * config.n_channels + channel;
  }
  std::int64_t send(int rank, int channel) const { return send_step[index(rank, channel)]; }
  std::int64_t recv(int rank, int channel) const { return recv_step[index(rank, channel)]; }
  int next(int rank) const { return (rank + 1) % config.n_ranks; }
  int prev(int rank) const { return (rank + config.n_ranks - 1) % config.n_ranks; }

  friend bool operator==(const RingState&, const RingState&) = default;
};

inline RingState ring_init(const RingConfig& config) {
  validate(config);
  RingState s;
  s.config = config;
  const auto n = static_cast<std::size_t>(config.n_ranks) * config.n_channels;
  s.send_step.assign(n, 0);
  s.recv_step.assign(n, 0);
  return s;
}

inline RingState ring_freeze(RingState state, int rank) {
  if (rank < 0 || rank >= state.config.n_ranks) throw TraceError("ring: rank out of range");
  state.frozen.insert(rank);
  return state;
}

namespace detail {

inline bool can_send(const RingState& s, int r, int c, std::int64_t total) {
  if (s.frozen.count(r)) return false;
  const auto sent = s.send(r, c);
  if (sent >= total) return false;
  if (sent >= s.recv(r, c) + 1) return false;
  return sent - s.recv(s.next(r), c) < s.config.fifo_depth;
}

// Makes every rank that has not been frozen a participant. A rank frozen
// before the collective started never joins, and nobody can make progress.
inline bool try_join(RingState& s) {
  if (s.joined) return true;
  if (!s.frozen.empty()) return false;
  s.joined = true;
  return true;
}

}  // namespace detail

// One synchronous round: every enabled (rank, channel) sends one step, decided
// against the state at the start of the round. Returns whether anything moved.
inline bool ring_round(RingState& s) {
  if (!detail::try_join(s)) return false;
  const auto total = total_steps(s.config);
  std::vector<std::pair<int, int>> enabled;
  for (int r = 0; r < s.config.n_ranks; ++r) {
    for (int c = 0; c < s.config.n_channels; ++c) {
      if (detail::can_send(s, r, c, total)) enabled.emplace_back(r, c);
    }
  }
  for (auto [r, c] : enabled) {
    ++s.send_step[s.index(r, c)];
    const int nx = s.next(r);
    if (!s.frozen.count(nx)) s.recv_step[s.index(nx, c)] = s.send(r, c);
  }
  return !enabled.empty();
}

inline RingState ring_advance(RingState state) {
  while (ring_round(state)) {
  }
  state.quiescent = true;
  return state;
}

// Runs rounds until `rank` has sent at least `t` steps on every channel, or
// nothing can move. Used to inject a freeze at a chosen point.
inline RingState ring_run_until(RingState state, int rank, std::int64_t t) {
  auto reached = [&] {
    for (int c = 0; c < state.config.n_channels; ++c) {
      if (state.send(rank, c) < t) return false;
    }
    return true;
  };
  while (!reached() && ring_round(state)) {
  }
  return state;
}

struct RingSnapshot {
  RingConfig config;
  std::vector<std::int64_t> send_step;
  std::vector<std::int64_t> recv_step;
  std::int64_t scanned_threads = 0;
  double cost = 0.0;

  friend bool operator==(const RingSnapshot&, const RingSnapshot&) = default;
};

// Per-thread read cost, in arbitrary units. LL packs a flag with every 8-byte
// word, so reading a block's step counters touches twice as many lines.
inline double per_thread_cost(Protocol p) {
  switch (p) {
    case Protocol::kSimple:
    case Protocol::kLL128:
      return 1.0;
    case Protocol::kLL:
      return 2.0;
  }
  return 1.0;
}

// SIMPLE keeps the step in the first thread of each block; LL and LL128 need
// the whole block scanned.
inline std::int64_t scanned_threads(const RingConfig& c, Protocol p) {
  const std::int64_t per_block = p == Protocol::kSimple ? 1 : c.threads_per_block;
  return static_cast<std::int64_t>(c.n_channels) * per_block;
}

inline RingSnapshot ring_snapshot(const RingState& state, Protocol protocol) {
  RingSnapshot snap;
  snap.config = state.config;
  snap.config.protocol = protocol;
  snap.send_step = state.send_step;
  snap.recv_step = state.recv_step;
  snap.scanned_threads = scanned_threads(state.config, protocol);
  snap.cost = static_cast<double>(snap.scanned_threads) * per_thread_cost(protocol);
  return snap;
}

struct RingDiagnosis {
  Confidence confidence = Confidence::kIndeterminate;
  std::optional<int> definite;
  std::set<int> probable;
  std::vector<std::int64_t> progress;  // min send step per rank
  int passes = 0;                      // sweeps over the counter array

  std::set<int> implicated() const {
    std::set<int> out = probable;
    if (definite) out.insert(*definite);
    return out;
  }
};

// Single sweep over the counters. The rank with the smallest transmit progress
// (receive progress breaks ties) stopped the ring; its neighbours share the
// stalled connections and are reported as probable.
inline RingDiagnosis ring_diagnose(const RingSnapshot& snap) {
  const auto& cfg = snap.config;
  RingDiagnosis d;
  d.progress.assign(cfg.n_ranks, INT64_MAX);
  std::vector<std::int64_t> recv_progress(cfg.n_ranks, INT64_MAX);
  for (int r = 0; r < cfg.n_ranks; ++r) {
    for (int c = 0; c < cfg.n_channels; ++c) {
      const auto i = static_cast<std::size_t>(r) * cfg.n_channels + c;
      d.progress[r] = std::min(d.progress[r], snap.send_step[i]);
      recv_progress[r] = std::min(recv_progress[r], snap.recv_step[i]);
    }
  }
  d.passes = 1;
  const auto uniform = [](const std::vector<std::int64_t>& v) {
    return std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) == v.end();
  };
  if (uniform(d.progress) && uniform(recv_progress)) return d;

  std::vector<int> minimal;
  for (int r = 0; r < cfg.n_ranks; ++r) {
    if (minimal.empty()) {
      minimal.push_back(r);
      continue;
    }
    const int m = minimal.front();
    const auto key_r = std::pair(d.progress[r], recv_progress[r]);
    const auto key_m = std::pair(d.progress[m], recv_progress[m]);
    if (key_r < key_m) {
      minimal.assign(1, r);
    } else if (key_r == key_m) {
      minimal.push_back(r);
    }
  }
  if (minimal.size() == 1) {
    const int f = minimal.front();
    d.definite = f;
    d.confidence = Confidence::kDefinite;
    for (int nb : {(f + cfg.n_ranks - 1) % cfg.n_ranks, (f + 1) % cfg.n_ranks}) {
      if (nb != f) d.probable.insert(nb);
    }
  } else {
    d.confidence = Confidence::kProbable;
    d.probable.insert(minimal.begin(), minimal.end());
  }
  return d;
}

}  // namespace xtrace

#endif  // XTRACE_RING_HPP_
