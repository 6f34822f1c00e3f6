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
#ifndef XTRACE_METRICS_HPP_
#define XTRACE_METRICS_HPP_

// Aggregated per-step metrics computed from traced records: throughput,
// matmul FLOPS, collective bus bandwidth, kernel issue latency and void
// percentages. Every function here is pure; verdicts live in diagnostics.hpp.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "xtrace/trace.hpp"

namespace xtrace {

class MetricError : public TraceError {
 public:
  using TraceError::TraceError;
};

// ---------------------------------------------------------------------------
// Intervals

struct Interval {
  Micros begin = 0;
  Micros end = 0;  // half-open

  Micros length() const { return end > begin ? end - begin : 0; }
};

// Sorts and merges into disjoint, non-adjacent intervals. Empty ones dropped.
inline std::vector<Interval> merge_intervals(std::vector<Interval> xs) {
  std::erase_if(xs, [](const Interval& i) { return i.end <= i.begin; });
  std::sort(xs.begin(), xs.end(),
            [](const Interval& a, const Interval& b) { return a.begin < b.begin; });
  std::vector<Interval> out;
  for (const auto& x : xs) {
    if (!out.empty() && x.begin <= out.back().end) {
      out.back().end = std::max(out.back().end, x.end);
    } else {
      out.push_back(x);
    }
  }
  return out;
}

inline Micros total_length(const std::vector<Interval>& merged) {
  Micros sum = 0;
  for (const auto& i : merged) sum += i.length();
  return sum;
}

// Intersection of two merged interval lists.
inline std::vector<Interval> intersect(const std::vector<Interval>& a,
                                       const std::vector<Interval>& b) {
  std::vector<Interval> out;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    const Micros lo = std::max(a[i].begin, b[j].begin);
    const Micros hi = std::min(a[i].end, b[j].end);
    if (lo < hi) out.push_back({lo, hi});
    if (a[i].end < b[j].end) {
      ++i;
    } else {
      ++j;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Void percentages

struct VoidSample {
  int rank = 0;
  int step = 0;
  Micros t_step = 0;
  Micros t_inter = 0;
  Micros t_minority = 0;
  double v_inter = 0.0;
  double v_minority = 0.0;
};

inline const TraceRecord* find_dataloader(const StepTimeline& t) {
  for (const auto& r : t.records) {
    if (r.name == names::kDataloader) return &r;
  }
  return nullptr;
}

// `previous` is the same rank's preceding step, if any; its last kernel end
// bounds the inter-step gap from the left.
//
// T_inter is the gap between the last kernel ending before the dataloader call
// and the first kernel starting after it. T_minority is the time inside the
// step's kernel span where no traced kernel runs although a traced kernel has
// already been launched and is waiting: the device is busy with untraced work.
inline VoidSample void_percentage(const StepTimeline& t, const StepTimeline* previous) {
  const TraceRecord* dl = find_dataloader(t);
  if (!dl) {
    throw MetricError("void_percentages: step " + std::to_string(t.step) + " of rank " +
                      std::to_string(t.rank) + " has no dataloader record");
  }
  VoidSample s;
  s.rank = t.rank;
  s.step = t.step;
  s.t_step = t.step_end_ts - t.step_begin_ts;

  std::vector<Interval> covered;
  std::vector<Interval> pending;
  Micros first_start = INT64_MAX;
  Micros last_end = INT64_MIN;
  for (const auto& r : t.records) {
    if (!r.is_gpu()) continue;
    covered.push_back({r.start_ts, r.end_ts});
    pending.push_back({r.issue_ts, r.start_ts});
    first_start = std::min(first_start, r.start_ts);
    last_end = std::max(last_end, r.end_ts);
  }
  if (covered.empty()) return s;

  Micros prev_end = dl->issue_ts;
  if (previous) {
    Micros latest = INT64_MIN;
    for (const auto& r : previous->records) {
      if (r.is_gpu() && r.end_ts <= dl->issue_ts) latest = std::max(latest, r.end_ts);
    }
    if (latest != INT64_MIN) prev_end = latest;
  }
  s.t_inter = std::max<Micros>(0, first_start - prev_end);

  const std::vector<Interval> window = {{first_start, last_end}};
  const auto busy = merge_intervals(std::move(covered));
  const auto waiting = intersect(merge_intervals(std::move(pending)), window);
  s.t_minority = total_length(waiting) - total_length(intersect(waiting, busy));

  if (s.t_step > 0) {
    s.v_inter = std::clamp(static_cast<double>(s.t_inter) / static_cast<double>(s.t_step), 0.0, 1.0);
    const Micros denom = s.t_step - s.t_inter;
    if (denom > 0) {
      s.v_minority = std::clamp(
          static_cast<double>(s.t_minority) / static_cast<double>(denom), 0.0, 1.0);
    }
  }
  return s;
}

// Timelines must be grouped per rank with steps ascending (as produced by
// group_timelines).
inline std::vector<VoidSample> void_percentages(const std::vector<StepTimeline>& timelines) {
  std::vector<VoidSample> out;
  out.reserve(timelines.size());
  for (std::size_t i = 0; i < timelines.size(); ++i) {
    const StepTimeline* prev = nullptr;
    if (i > 0 && timelines[i - 1].rank == timelines[i].rank &&
        timelines[i - 1].step < timelines[i].step) {
      prev = &timelines[i - 1];
    }
    out.push_back(void_percentage(timelines[i], prev));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Throughput

struct ThroughputSample {
  int step = 0;
  Micros wall_time = 0;  // slowest rank, dataloader to dataloader
  double samples_per_sec = 0.0;
};

// One sample per step that is followed by another step on every rank, so the
// step's wall time is closed by the next dataloader call.
inline std::vector<ThroughputSample> throughput_series(const std::vector<StepTimeline>& timelines) {
  std::map<int, std::map<int, const StepTimeline*>> by_step;  // step -> rank -> timeline
  std::map<int, int> last_step;                               // rank -> last step
  for (const auto& t : timelines) {
    by_step[t.step][t.rank] = &t;
    auto [it, _] = last_step.try_emplace(t.rank, t.step);
    it->second = std::max(it->second, t.step);
  }
  std::vector<ThroughputSample> out;
  for (const auto& [step, ranks] : by_step) {
    bool closed = ranks.size() == last_step.size();
    Micros wall = 0;
    std::int64_t samples = 0;
    for (const auto& [rank, t] : ranks) {
      if (last_step[rank] <= step) closed = false;
      const TraceRecord* dl = find_dataloader(*t);
      if (!dl) {
        throw MetricError("throughput_series: step " + std::to_string(step) + " of rank " +
                          std::to_string(rank) + " has no dataloader record");
      }
      samples = std::max(samples, dl->attr_or("samples", 0));
      wall = std::max(wall, t->step_end_ts - t->step_begin_ts);
    }
    if (!closed) continue;
    if (samples <= 0) {
      throw MetricError("throughput_series: step " + std::to_string(step) +
                        " consumed no samples");
    }
    if (wall <= 0) throw MetricError("throughput_series: zero-length step");
    out.push_back({step, wall, static_cast<double>(samples) * 1e6 / static_cast<double>(wall)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// FLOPS

struct FlopsSample {
  int rank = 0;
  int step = 0;
  std::string signature;
  double flops = 0.0;       // operations per second
  double work = 0.0;        // operations
  Micros duration = 0;
  bool overlapped = false;  // intersects a comm kernel on the same rank
};

inline std::string matmul_signature(const TraceRecord& r) {
  auto need = [&](std::string_view k) {
    auto v = r.attr(k);
    if (!v || *v <= 0) {
      throw MetricError("flops_metrics: matmul record missing dimension " + std::string(k));
    }
    return *v;
  };
  return std::string(r.name) + "/" + std::to_string(need("m")) + "/" + std::to_string(need("n")) +
         "/" + std::to_string(need("k")) + "/" + std::to_string(need("dtype_bytes"));
}

inline std::vector<FlopsSample> flops_samples(const std::vector<StepTimeline>& timelines) {
  std::vector<FlopsSample> out;
  for (const auto& t : timelines) {
    std::vector<Interval> comm;
    for (const auto& r : t.records) {
      if (r.kind == RecordKind::kGpuComm) comm.push_back({r.start_ts, r.end_ts});
    }
    for (const auto& r : t.records) {
      if (r.kind != RecordKind::kGpuCompute || r.name != names::kMatmul) continue;
      FlopsSample s;
      s.rank = r.rank;
      s.step = r.step;
      s.signature = matmul_signature(r);
      s.duration = r.end_ts - r.start_ts;
      if (s.duration <= 0) continue;
      s.work = 2.0 * static_cast<double>(r.attr_or("m", 0)) *
               static_cast<double>(r.attr_or("n", 0)) * static_cast<double>(r.attr_or("k", 0));
      s.flops = s.work * 1e6 / static_cast<double>(s.duration);
      for (const auto& c : comm) {
        if (c.begin < r.end_ts && r.start_ts < c.end) {
          s.overlapped = true;
          break;
        }
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bandwidth

// Traffic factor relating payload bytes to bytes crossing each link.
inline double bus_factor(std::string_view collective, std::int64_t group_size) {
  const double g = static_cast<double>(group_size);
  if (collective == names::kAllreduce) return 2.0 * (g - 1.0) / g;
  if (collective == names::kAllgather || collective == names::kReduceScatter) {
    return (g - 1.0) / g;
  }
  return 1.0;
}

struct BandwidthSample {
  std::int64_t collective_seq = 0;
  int step = 0;
  std::string name;
  std::string signature;
  std::vector<int> ranks;
  Micros window = 0;
  double bus_bandwidth = 0.0;  // bytes/sec
};

inline std::string collective_signature(std::string_view name, std::int64_t bytes,
                                        std::int64_t group_size) {
  return std::string(name) + "/" + std::to_string(bytes) + "/" + std::to_string(group_size);
}

// The transfer window runs from the latest start across participants (the
// last rank to arrive) to the shared end.
inline std::vector<BandwidthSample> bandwidth_samples(const std::vector<StepTimeline>& timelines) {
  std::map<std::int64_t, std::vector<const TraceRecord*>> groups;
  for (const auto& t : timelines) {
    for (const auto& r : t.records) {
      if (r.kind != RecordKind::kGpuComm) continue;
      auto seq = r.attr("collective_seq");
      if (!seq) throw MetricError("bandwidth_metrics: comm record without collective_seq");
      groups[*seq].push_back(&r);
    }
  }
  std::vector<BandwidthSample> out;
  for (const auto& [seq, recs] : groups) {
    const auto& first = *recs.front();
    const auto g = first.attr_or("group_size", 0);
    const auto bytes = first.attr_or("bytes", 0);
    if (g < 2) {
      throw MetricError("bandwidth_metrics: collective " + std::to_string(seq) +
                        " has group_size < 2");
    }
    if (static_cast<std::int64_t>(recs.size()) < g) {
      throw MetricError("bandwidth_metrics: collective " + std::to_string(seq) + " has " +
                        std::to_string(recs.size()) + " records for group_size " +
                        std::to_string(g));
    }
    BandwidthSample s;
    s.collective_seq = seq;
    s.step = first.step;
    s.name = first.name;
    s.signature = collective_signature(first.name, bytes, g);
    Micros start = INT64_MIN, end = INT64_MIN;
    for (const auto* r : recs) {
      start = std::max(start, r->start_ts);
      end = std::max(end, r->end_ts);
      s.ranks.push_back(r->rank);
    }
    s.window = end - start;
    if (s.window <= 0) continue;
    s.bus_bandwidth = static_cast<double>(bytes) * bus_factor(first.name, g) * 1e6 /
                      static_cast<double>(s.window);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Issue latency

struct IssueLatency {
  std::string name;
  int rank = 0;
  int step = 0;
  Micros latency = 0;
};

inline std::vector<IssueLatency> issue_latencies(const std::vector<StepTimeline>& timelines,
                                                 int first_step = 0) {
  std::vector<IssueLatency> out;
  for (const auto& t : timelines) {
    if (t.step < first_step) continue;
    for (const auto& r : t.records) {
      if (r.kind != RecordKind::kGpuComm) continue;
      out.push_back({r.name, r.rank, r.step, r.start_ts - r.issue_ts});
    }
  }
  return out;
}

// Fixed log-spaced buckets over [1 us, 10 s]. Bucket i covers
// [edge(i), edge(i+1)); values outside the range clamp to the end buckets.
inline constexpr int kHistogramBuckets = 64;
using Histogram = std::array<std::int64_t, kHistogramBuckets>;

inline const std::array<double, kHistogramBuckets + 1>& histogram_edges() {
  static const auto edges = [] {
    std::array<double, kHistogramBuckets + 1> e{};
    for (int i = 0; i <= kHistogramBuckets; ++i) {
      e[i] = std::pow(10.0, 7.0 * static_cast<double>(i) / kHistogramBuckets);
    }
    return e;
  }();
  return edges;
}

inline int histogram_bucket(Micros latency) {
  const auto& e = histogram_edges();
  const double x = static_cast<double>(latency);
  auto it = std::upper_bound(e.begin(), e.end(), x);
  const int idx = static_cast<int>(it - e.begin()) - 1;
  return std::clamp(idx, 0, kHistogramBuckets - 1);
}

inline void add_to_histogram(Histogram& h, Micros latency) { ++h[histogram_bucket(latency)]; }

struct EmpiricalCdf {
  std::vector<Micros> sorted;

  double operator()(double x) const {
    if (sorted.empty()) return 0.0;
    auto it = std::upper_bound(sorted.begin(), sorted.end(), x,
                               [](double v, Micros s) { return v < static_cast<double>(s); });
    return static_cast<double>(it - sorted.begin()) / static_cast<double>(sorted.size());
  }

  // Smallest sample with CDF >= q.
  Micros quantile(double q) const {
    if (sorted.empty()) return 0;
    auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
    idx = std::clamp<std::size_t>(idx, 1, sorted.size()) - 1;
    return sorted[idx];
  }
};

struct IssueLatencyCdfs {
  EmpiricalCdf pooled;
  std::map<std::string, EmpiricalCdf> per_name;
};

inline IssueLatencyCdfs issue_latency_cdf(const std::vector<StepTimeline>& timelines,
                                          int first_step = 0) {
  IssueLatencyCdfs out;
  for (const auto& l : issue_latencies(timelines, first_step)) {
    out.pooled.sorted.push_back(l.latency);
    out.per_name[l.name].sorted.push_back(l.latency);
  }
  std::sort(out.pooled.sorted.begin(), out.pooled.sorted.end());
  for (auto& [_, c] : out.per_name) std::sort(c.sorted.begin(), c.sorted.end());
  return out;
}

// ---------------------------------------------------------------------------
// Small statistics helpers

inline double median(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const auto n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

inline double mean(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

inline double stddev(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size()));
}

}  // namespace xtrace

#endif  // XTRACE_METRICS_HPP_
