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
#include <gtest/gtest.h>

#include <map>
#include <random>
#include <set>
#include <vector>

#include "xtrace/ring.hpp"

namespace xtrace {
namespace {

RingConfig make_config(int n, int channels, int depth) {
  RingConfig c;
  c.n_ranks = n;
  c.n_channels = channels;
  c.fifo_depth = depth;
  c.chunks = min_chunks(n, depth);
  return c;
}

TEST(Ring, InitHasZeroCounters) {
  const auto s = ring_init(make_config(4, 3, 2));
  EXPECT_EQ(s.send_step.size(), 12u);
  EXPECT_EQ(s.recv_step.size(), 12u);
  for (auto v : s.send_step) EXPECT_EQ(v, 0);
  for (auto v : s.recv_step) EXPECT_EQ(v, 0);
  EXPECT_TRUE(s.frozen.empty());
}

TEST(Ring, RejectsBadConfig) {
  auto c = make_config(4, 1, 1);
  c.chunks = min_chunks(4, 1) - 1;
  EXPECT_THROW(ring_init(c), TraceError);
  c = make_config(1, 1, 1);
  EXPECT_THROW(ring_init(c), TraceError);
  EXPECT_THROW(ring_freeze(ring_init(make_config(3, 1, 1)), 3), TraceError);
}

TEST(Ring, HealthyRunCompletes) {
  for (int n = 2; n <= 8; ++n) {
    for (int d = 1; d <= 3; ++d) {
      const auto c = make_config(n, 2, d);
      const auto s = ring_advance(ring_init(c));
      for (auto v : s.send_step) EXPECT_EQ(v, total_steps(c));
      for (auto v : s.recv_step) EXPECT_EQ(v, total_steps(c));
      EXPECT_TRUE(s.quiescent);
    }
  }
}

TEST(Ring, TotalStepsClosedForm) {
  auto c = make_config(4, 1, 1);
  c.chunks = 10;
  EXPECT_EQ(total_steps(c), 2 * 3 * 3);
  c.chunks = 12;
  EXPECT_EQ(total_steps(c), 2 * 3 * 3);
}

TEST(Ring, FrozenRankCountersNeverMove) {
  const auto c = make_config(5, 2, 2);
  auto s = ring_freeze(ring_run_until(ring_init(c), 2, 4), 2);
  const auto before_send = s.send(2, 0);
  const auto before_recv = s.recv(2, 1);
  s = ring_advance(s);
  EXPECT_EQ(s.send(2, 0), before_send);
  EXPECT_EQ(s.recv(2, 1), before_recv);
  EXPECT_LT(s.send(2, 0), total_steps(c));
}

TEST(Ring, CountersMonotoneAndFlowControlHolds) {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 7);
    const int d = 1 + static_cast<int>(rng() % 3);
    const auto c = make_config(n, 1 + static_cast<int>(rng() % 3), d);
    auto s = ring_init(c);
    const int f = static_cast<int>(rng() % n);
    const auto t = static_cast<std::int64_t>(d + 1 + rng() % (total_steps(c) - d - 1));
    s = ring_freeze(ring_run_until(s, f, t), f);
    auto prev = s;
    while (ring_round(s)) {
      for (std::size_t i = 0; i < s.send_step.size(); ++i) {
        ASSERT_GE(s.send_step[i], prev.send_step[i]);
        ASSERT_GE(s.recv_step[i], prev.recv_step[i]);
      }
      for (int r = 0; r < n; ++r) {
        for (int ch = 0; ch < c.n_channels; ++ch) {
          ASSERT_LE(s.send(r, ch), s.recv(r, ch) + 1);
          if (!s.frozen.count(s.next(r))) ASSERT_EQ(s.recv(s.next(r), ch), s.send(r, ch));
          ASSERT_LE(s.send(r, ch) - s.recv(s.next(r), ch), d);
        }
      }
      prev = s;
    }
  }
}

// Exhaustive asynchronous model: any enabled rank may send next, and the
// freeze of f may happen at any moment while send[f] == t.
struct AsyncState {
  std::vector<std::int64_t> send, recv;
  bool frozen = false;
  auto operator<=>(const AsyncState&) const = default;
};

std::set<AsyncState> async_terminals(int n, int depth, std::int64_t total, int f, std::int64_t t) {
  std::set<AsyncState> seen, terminals;
  std::vector<AsyncState> stack{{std::vector<std::int64_t>(n, 0), std::vector<std::int64_t>(n, 0), false}};
  while (!stack.empty()) {
    auto s = stack.back();
    stack.pop_back();
    if (!seen.insert(s).second) continue;
    bool moved = false;
    if (!s.frozen && s.send[f] == t) {
      auto x = s;
      x.frozen = true;
      stack.push_back(x);
      moved = true;
    }
    for (int r = 0; r < n; ++r) {
      if (s.frozen && r == f) continue;
      const int nx = (r + 1) % n;
      if (s.send[r] >= total || s.send[r] >= s.recv[r] + 1) continue;
      if (s.send[r] - s.recv[nx] >= depth) continue;
      // Without the freeze event f must not run past t.
      if (!s.frozen && r == f && s.send[r] >= t) continue;
      auto x = s;
      ++x.send[r];
      if (!(x.frozen && nx == f)) x.recv[nx] = x.send[r];
      stack.push_back(x);
      moved = true;
    }
    if (!moved && s.frozen) terminals.insert(s);
  }
  return terminals;
}

TEST(Ring, AsyncInterleavingOracle) {
  for (int n = 2; n <= 5; ++n) {
    for (int d = 1; d <= 2; ++d) {
      const auto c = make_config(n, 1, d);
      const auto total = total_steps(c);
      for (int f = 0; f < n; ++f) {
        for (std::int64_t t = d + 1; t < total; ++t) {
          const auto terms = async_terminals(n, d, total, f, t);
          ASSERT_FALSE(terms.empty());
          for (const auto& term : terms) {
            RingSnapshot snap;
            snap.config = c;
            snap.send_step = term.send;
            snap.recv_step = term.recv;
            const auto diag = ring_diagnose(snap);
            ASSERT_EQ(diag.definite, f) << "n=" << n << " d=" << d << " t=" << t;
          }
          const auto lib = ring_advance(ring_freeze(ring_run_until(ring_init(c), f, t), f));
          ASSERT_EQ(lib.send(f, 0), t);
          ASSERT_TRUE(terms.count(AsyncState{lib.send_step, lib.recv_step, true}))
              << "n=" << n << " d=" << d << " f=" << f << " t=" << t;
        }
      }
    }
  }
}

TEST(Ring, LocalizationGrid) {
  for (int n = 2; n <= 8; ++n) {
    for (int ch = 1; ch <= 4; ++ch) {
      for (int d = 1; d <= 3; ++d) {
        for (auto proto : {Protocol::kSimple, Protocol::kLL, Protocol::kLL128}) {
          const auto c = make_config(n, ch, d);
          for (int f = 0; f < n; ++f) {
            for (std::int64_t t = d + 1; t < total_steps(c); ++t) {
              const auto s = ring_advance(ring_freeze(ring_run_until(ring_init(c), f, t), f));
              const auto diag = ring_diagnose(ring_snapshot(s, proto));
              ASSERT_EQ(diag.confidence, Confidence::kDefinite);
              ASSERT_EQ(diag.definite, f);
              ASSERT_EQ(diag.passes, 1);
              ASSERT_TRUE(diag.implicated().size() <= 3u);
            }
          }
        }
      }
    }
  }
}

TEST(Ring, NeighboursAreProbable) {
  const auto c = make_config(6, 1, 2);
  const auto s = ring_advance(ring_freeze(ring_run_until(ring_init(c), 0, 5), 0));
  const auto diag = ring_diagnose(ring_snapshot(s, Protocol::kSimple));
  EXPECT_EQ(diag.definite, 0);
  EXPECT_EQ(diag.probable, (std::set<int>{1, 5}));
}

TEST(Ring, FreezeBeforeJoinIsIndeterminate) {
  const auto c = make_config(4, 2, 1);
  const auto s = ring_advance(ring_freeze(ring_init(c), 1));
  const auto diag = ring_diagnose(ring_snapshot(s, Protocol::kSimple));
  EXPECT_EQ(diag.confidence, Confidence::kIndeterminate);
  EXPECT_TRUE(diag.implicated().empty());
}

TEST(Ring, HealthySnapshotIsIndeterminate) {
  const auto s = ring_advance(ring_init(make_config(4, 2, 1)));
  EXPECT_EQ(ring_diagnose(ring_snapshot(s, Protocol::kLL)).confidence, Confidence::kIndeterminate);
}

TEST(Ring, TwoAdjacentFreezesBothImplicated) {
  for (int n = 3; n <= 8; ++n) {
    const auto c = make_config(n, 2, 2);
    for (int f = 0; f < n; ++f) {
      const int g = (f + 1) % n;
      auto s = ring_run_until(ring_init(c), f, 4);
      s = ring_freeze(s, f);
      s = ring_freeze(ring_run_until(s, g, 5), g);
      const auto diag = ring_diagnose(ring_snapshot(ring_advance(s), Protocol::kSimple));
      EXPECT_NE(diag.confidence, Confidence::kIndeterminate);
      const auto imp = diag.implicated();
      EXPECT_TRUE(imp.count(f) && imp.count(g)) << "n=" << n << " f=" << f;
    }
  }
}

TEST(Ring, SnapshotCostByProtocol) {
  auto c = make_config(4, 4, 1);
  c.threads_per_block = 128;
  const auto s = ring_init(c);
  const auto simple = ring_snapshot(s, Protocol::kSimple);
  const auto ll128 = ring_snapshot(s, Protocol::kLL128);
  const auto ll = ring_snapshot(s, Protocol::kLL);
  EXPECT_EQ(simple.scanned_threads, 4);
  EXPECT_EQ(ll128.scanned_threads, 4 * 128);
  EXPECT_EQ(ll.scanned_threads, 4 * 128);
  EXPECT_LT(simple.cost, ll128.cost);
  EXPECT_LT(ll128.cost, ll.cost);
  EXPECT_EQ(parse_protocol("LL128"), Protocol::kLL128);
  EXPECT_FALSE(parse_protocol("ll").has_value());
}

}  // namespace
}  // namespace xtrace
