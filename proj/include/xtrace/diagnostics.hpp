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
#ifndef XTRACE_DIAGNOSTICS_HPP_
#define XTRACE_DIAGNOSTICS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "xtrace/baseline.hpp"
#include "xtrace/codec.hpp"
#include "xtrace/metrics.hpp"
#include "xtrace/ring.hpp"
#include "xtrace/trace.hpp"

namespace xtrace {

struct Thresholds {
  Micros hang_timeout = 30'000'000;
  double throughput_drop_frac = 0.05;
  double flops_rank_spread_frac = 0.10;
  double flops_low_frac = 0.30;
  double bandwidth_low_frac = 0.20;
  double ks_threshold = 0.25;
  double v_inter_max = 0.05;
  double v_minority_max = 0.12;
  // Periodic-stall signature.
  double periodic_acf_min = 0.5;
  int periodic_min_lag = 50;
  // A signature must hold at least this share of non-overlapped matmul time
  // before it can be called unoptimized.
  double unoptimized_time_share = 0.10;
  int throughput_window = 5;  // steps

  friend bool operator==(const Thresholds&, const Thresholds&) = default;
};

inline void validate(const Thresholds& t) {
  auto frac = [](double v, const char* name) {
    if (!(v > 0.0 && v < 1.0)) {
      throw TraceError(std::string("thresholds: ") + name + " must be in (0, 1)");
    }
  };
  if (t.hang_timeout <= 0) throw TraceError("thresholds: hang_timeout must be > 0");
  frac(t.throughput_drop_frac, "throughput_drop_frac");
  frac(t.flops_rank_spread_frac, "flops_rank_spread_frac");
  frac(t.flops_low_frac, "flops_low_frac");
  frac(t.bandwidth_low_frac, "bandwidth_low_frac");
  frac(t.ks_threshold, "ks_threshold");
  frac(t.v_inter_max, "v_inter_max");
  frac(t.v_minority_max, "v_minority_max");
  frac(t.periodic_acf_min, "periodic_acf_min");
  frac(t.unoptimized_time_share, "unoptimized_time_share");
  if (t.periodic_min_lag < 1) throw TraceError("thresholds: periodic_min_lag must be >= 1");
  if (t.throughput_window < 1) throw TraceError("thresholds: throughput_window must be >= 1");
}

// Plain key=value lines; '#' starts a comment. Unknown keys are errors.
inline Thresholds parse_thresholds(std::string_view text) {
  Thresholds t;
  int line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\r')) line.remove_suffix(1);
    while (!line.empty() && line.front() == ' ') line.remove_prefix(1);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const auto where = "thresholds line " + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) throw TraceError(where + "expected key=value");
    const auto k = line.substr(0, eq);
    const auto v = line.substr(eq + 1);
    auto real = [&] {
      auto d = parse_double(v);
      if (!d) throw TraceError(where + "bad number '" + std::string(v) + "'");
      return *d;
    };
    auto integer = [&] {
      auto i = parse_int(v);
      if (!i) throw TraceError(where + "bad integer '" + std::string(v) + "'");
      return *i;
    };
    if (k == "hang_timeout") t.hang_timeout = integer();
    else if (k == "throughput_drop_frac") t.throughput_drop_frac = real();
    else if (k == "flops_rank_spread_frac") t.flops_rank_spread_frac = real();
    else if (k == "flops_low_frac") t.flops_low_frac = real();
    else if (k == "bandwidth_low_frac") t.bandwidth_low_frac = real();
    else if (k == "ks_threshold") t.ks_threshold = real();
    else if (k == "v_inter_max") t.v_inter_max = real();
    else if (k == "v_minority_max") t.v_minority_max = real();
    else if (k == "periodic_acf_min") t.periodic_acf_min = real();
    else if (k == "periodic_min_lag") t.periodic_min_lag = static_cast<int>(integer());
    else if (k == "unoptimized_time_share") t.unoptimized_time_share = real();
    else if (k == "throughput_window") t.throughput_window = static_cast<int>(integer());
    else throw TraceError(where + "unknown key '" + std::string(k) + "'");
  }
  validate(t);
  return t;
}

// ---------------------------------------------------------------------------
// Hang detection

struct LivenessView {
  int rank = 0;
  std::optional<Micros> last_heartbeat;
  std::optional<Micros> last_completion;
};

struct HangAlert {
  Micros now = 0;
  std::set<int> silent_ranks;
  std::map<int, Micros> last_seen;  // most recent completed event per rank
};

inline std::vector<LivenessView> liveness(const std::vector<StepTimeline>& timelines) {
  std::map<int, LivenessView> by_rank;
  for (const auto& t : timelines) {
    auto& v = by_rank[t.rank];
    v.rank = t.rank;
    for (const auto& r : t.records) {
      auto& slot = r.kind == RecordKind::kHeartbeat ? v.last_heartbeat : v.last_completion;
      slot = std::max(slot.value_or(r.end_ts), r.end_ts);
    }
  }
  std::vector<LivenessView> out;
  for (auto& [_, v] : by_rank) out.push_back(v);
  return out;
}

inline Micros latest_timestamp(const std::vector<StepTimeline>& timelines) {
  Micros now = 0;
  for (const auto& t : timelines) {
    for (const auto& r : t.records) now = std::max(now, r.end_ts);
  }
  return now;
}

inline std::optional<HangAlert> detect_hang(const std::vector<LivenessView>& views, Micros now,
                                            const Thresholds& th) {
  HangAlert alert;
  alert.now = now;
  for (const auto& v : views) {
    const Micros hb = v.last_heartbeat.value_or(0);
    const Micros done = v.last_completion.value_or(0);
    alert.last_seen[v.rank] = done;
    if (now - hb > th.hang_timeout || now - done > th.hang_timeout) alert.silent_ranks.insert(v.rank);
  }
  if (alert.silent_ranks.empty()) return std::nullopt;
  return alert;
}

inline std::optional<HangAlert> detect_hang(const std::vector<StepTimeline>& timelines,
                                            const Thresholds& th) {
  return detect_hang(liveness(timelines), latest_timestamp(timelines), th);
}

enum class StackVerdictKind { kNonCommHang, kCommHang, kCrash, kIndeterminate };

struct StackVerdict {
  StackVerdictKind kind = StackVerdictKind::kIndeterminate;
  std::set<int> ranks;
  std::optional<std::int64_t> collective_seq;
};

inline StackVerdict classify_stacks(const std::vector<CallStackSnapshot>& stacks) {
  StackVerdict v;
  if (stacks.empty()) return v;
  for (const auto& s : stacks) {
    if (!s.present) v.ranks.insert(s.rank);
  }
  if (!v.ranks.empty()) {
    v.kind = StackVerdictKind::kCrash;
    return v;
  }
  std::set<int> non_comm;
  for (const auto& s : stacks) {
    if (s.frames.empty() || !is_comm_function(s.frames.front())) non_comm.insert(s.rank);
  }
  if (!non_comm.empty()) {
    if (2 * non_comm.size() < stacks.size()) {
      v.kind = StackVerdictKind::kNonCommHang;
      v.ranks = std::move(non_comm);
    }
    return v;
  }
  const auto seq = stacks.front().collective_seq;
  for (const auto& s : stacks) {
    if (s.collective_seq != seq) return v;
  }
  v.kind = StackVerdictKind::kCommHang;
  v.collective_seq = seq;
  return v;
}

// ---------------------------------------------------------------------------
// Distribution comparison

struct CdfComparison {
  double statistic = 0.0;  // two-sided, max |F_cur - F_base| at bucket edges
  double shorter = 0.0;    // max (F_cur - F_base): current mass at smaller latencies
  double longer = 0.0;     // max (F_base - F_cur)
  bool stall = false;
  std::int64_t n_current = 0;
  std::int64_t n_baseline = 0;
};

// Both sides are binned into the baseline's buckets so the statistic does
// not depend on how finely the current run is sampled.
inline CdfComparison compare_cdf(const std::vector<Micros>& current, const Histogram& baseline,
                                 const Thresholds& th) {
  CdfComparison c;
  for (auto n : baseline) c.n_baseline += n;
  c.n_current = static_cast<std::int64_t>(current.size());
  if (c.n_baseline == 0) throw MetricError("compare_cdf: empty baseline histogram");
  if (current.empty()) return c;
  Histogram cur{};
  for (auto l : current) add_to_histogram(cur, l);
  double fc = 0.0, fb = 0.0;
  for (int i = 0; i < kHistogramBuckets; ++i) {
    fc += static_cast<double>(cur[i]) / static_cast<double>(c.n_current);
    fb += static_cast<double>(baseline[i]) / static_cast<double>(c.n_baseline);
    c.shorter = std::max(c.shorter, fc - fb);
    c.longer = std::max(c.longer, fb - fc);
  }
  c.statistic = std::max(c.shorter, c.longer);
  c.stall = c.statistic > th.ks_threshold && c.shorter >= c.longer;
  return c;
}

// Autocorrelation of a rank's issue-gap spike train. A stall that repeats
// every `lag` kernel issues produces a peak at that lag.
struct PeriodicSignature {
  int lag = 0;  // 0 when no peak clears the bar
  double peak = 0.0;
};

inline PeriodicSignature periodic_signature(const std::vector<double>& gaps, double acf_min) {
  PeriodicSignature sig;
  const auto n = gaps.size();
  if (n < 4) return sig;
  std::vector<double> sorted = gaps;
  std::sort(sorted.begin(), sorted.end());
  const double base = sorted[n / 2];
  std::vector<double> spikes(n);
  for (std::size_t i = 0; i < n; ++i) spikes[i] = gaps[i] > 3.0 * base + 1.0 ? 1.0 : 0.0;
  const double m = mean(spikes);
  double var = 0.0;
  for (auto x : spikes) var += (x - m) * (x - m);
  if (var == 0.0) return sig;
  auto acf = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += (spikes[i] - m) * (spikes[i + lag] - m);
    return s / var;
  };
  std::vector<double> r(n / 2 + 2, 0.0);
  for (std::size_t lag = 1; lag < r.size() && lag < n; ++lag) r[lag] = acf(lag);
  for (std::size_t lag = 1; lag + 1 < r.size(); ++lag) {
    if (r[lag] > acf_min && r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1]) {
      sig.lag = static_cast<int>(lag);
      sig.peak = r[lag];
      return sig;
    }
  }
  return sig;
}

// Issue gaps between consecutive traced kernels of one rank. The first
// kernel of each step is given gap 0 so the step boundary does not register
// as a stall while indices stay aligned with issue counts.
inline std::vector<double> issue_gaps(const std::vector<StepTimeline>& timelines, int rank,
                                      int first_step) {
  std::vector<double> gaps;
  for (const auto& t : timelines) {
    if (t.rank != rank || t.step < first_step) continue;
    std::optional<Micros> prev;
    for (const auto& r : t.records) {
      if (!r.is_gpu()) continue;
      gaps.push_back(prev ? static_cast<double>(r.issue_ts - *prev) : 0.0);
      prev = r.issue_ts;
    }
  }
  return gaps;
}

// ---------------------------------------------------------------------------
// Verdicts

struct DiagnoseInput {
  std::vector<StepTimeline> timelines;
  std::vector<CallStackSnapshot> stacks;
  std::vector<HungCollective> hung;
  std::optional<BaselineProfile> baseline;
  Thresholds thresholds;
};

struct DiagnoseResult {
  std::vector<AnomalyReport> reports;
  std::vector<std::string> notes;  // degraded-mode explanations
};

namespace detail {

inline AnomalyReport make_report(AnomalyClass c, Family f, Confidence conf) {
  AnomalyReport r;
  r.anomaly = c;
  r.family = f;
  r.confidence = conf;
  r.attribution = default_attribution(c);
  return r;
}

inline std::vector<StepTimeline> steady_steps(const std::vector<StepTimeline>& timelines) {
  std::vector<StepTimeline> out;
  for (const auto& t : timelines) {
    if (t.step >= kFirstSteadyStep) out.push_back(t);
  }
  return out;
}

}  // namespace detail

inline AnomalyReport hang_report(const StackVerdict& v, const std::vector<HungCollective>& hung,
                                 const std::optional<HangAlert>& alert) {
  using detail::make_report;
  switch (v.kind) {
    case StackVerdictKind::kCrash: {
      auto r = make_report(AnomalyClass::kCrash, Family::kHang, Confidence::kDefinite);
      r.implicated_ranks = v.ranks;
      r.evidence["absent_stacks"] = static_cast<double>(v.ranks.size());
      return r;
    }
    case StackVerdictKind::kNonCommHang: {
      auto r = make_report(AnomalyClass::kHangNonComm, Family::kHang, Confidence::kDefinite);
      r.implicated_ranks = v.ranks;
      r.evidence["non_comm_stacks"] = static_cast<double>(v.ranks.size());
      return r;
    }
    case StackVerdictKind::kCommHang: {
      auto r = make_report(AnomalyClass::kHangComm, Family::kHang, Confidence::kIndeterminate);
      if (v.collective_seq) r.evidence["collective_seq"] = static_cast<double>(*v.collective_seq);
      for (const auto& h : hung) {
        if (v.collective_seq && h.collective_seq != *v.collective_seq) continue;
        const auto d = ring_diagnose(h.snapshot);
        r.confidence = d.confidence;
        // A definite culprit stands alone; its neighbours go to evidence.
        const auto named = d.definite ? std::set<int>{*d.definite} : d.probable;
        for (int pos : named) r.implicated_ranks.insert(h.group.at(pos));
        r.evidence["probable_ranks"] = static_cast<double>(d.probable.size());
        const auto [lo, hi] = std::minmax_element(d.progress.begin(), d.progress.end());
        r.evidence["ring_progress_spread"] = static_cast<double>(*hi - *lo);
        r.evidence["ring_passes"] = d.passes;
        r.evidence["snapshot_threads"] = static_cast<double>(h.snapshot.scanned_threads);
        r.evidence["snapshot_cost"] = h.snapshot.cost;
        if (d.definite) r.evidence["definite_rank"] = h.group[*d.definite];
        break;
      }
      return r;
    }
    case StackVerdictKind::kIndeterminate:
      break;
  }
  auto r = make_report(AnomalyClass::kHangComm, Family::kHang, Confidence::kIndeterminate);
  if (alert) {
    r.implicated_ranks = alert->silent_ranks;
    r.evidence["silent_ranks"] = static_cast<double>(alert->silent_ranks.size());
  }
  return r;
}

inline std::vector<AnomalyReport> flops_verdicts(const std::vector<StepTimeline>& steady,
                                                 const std::optional<BaselineProfile>& baseline,
                                                 const Thresholds& th,
                                                 std::vector<std::string>* notes = nullptr) {
  std::map<std::string, std::map<int, std::vector<double>>> by_sig;
  std::map<std::string, double> sig_time;
  double total_time = 0.0;
  for (const auto& s : flops_samples(steady)) {
    if (s.overlapped) continue;
    by_sig[s.signature][s.rank].push_back(s.flops);
    sig_time[s.signature] += static_cast<double>(s.duration);
    total_time += static_cast<double>(s.duration);
  }

  std::map<std::string, std::map<int, double>> rank_median;
  std::map<std::string, double> cross;
  for (auto& [sig, ranks] : by_sig) {
    std::vector<double> meds;
    for (auto& [rank, xs] : ranks) {
      rank_median[sig][rank] = median(xs);
      meds.push_back(rank_median[sig][rank]);
    }
    cross[sig] = median(meds);
  }

  std::vector<AnomalyReport> out;
  std::map<int, double> slow_ranks;  // rank -> worst spread
  for (const auto& [sig, meds] : rank_median) {
    for (const auto& [rank, m] : meds) {
      if (m < (1.0 - th.flops_rank_spread_frac) * cross[sig]) {
        const double spread = 1.0 - m / cross[sig];
        slow_ranks[rank] = std::max(slow_ranks[rank], spread);
      }
    }
  }
  if (!slow_ranks.empty()) {
    auto r = detail::make_report(AnomalyClass::kUnderclockedGpu, Family::kFlops, Confidence::kProbable);
    double worst = 0.0;
    for (const auto& [rank, spread] : slow_ranks) {
      r.implicated_ranks.insert(rank);
      worst = std::max(worst, spread);
    }
    r.evidence["flops_spread"] = worst;
    out.push_back(std::move(r));
  }

  double fallback = 0.0;
  for (const auto& [_, c] : cross) fallback = std::max(fallback, c);
  bool used_fallback = false;
  for (const auto& [sig, meds] : rank_median) {
    double ref = fallback;
    if (baseline) {
      auto it = baseline->flops_ref.find(sig);
      if (it != baseline->flops_ref.end()) {
        ref = it->second;
      } else {
        used_fallback = true;
      }
    } else {
      used_fallback = true;
    }
    if (total_time <= 0.0 || sig_time[sig] / total_time < th.unoptimized_time_share) continue;
    bool all_low = true;
    double best = 0.0;
    for (const auto& [_, m] : meds) {
      all_low = all_low && m < (1.0 - th.flops_low_frac) * ref;
      best = std::max(best, m);
    }
    if (!all_low) continue;
    auto r = detail::make_report(AnomalyClass::kUnoptimizedKernel, Family::kFlops, Confidence::kProbable);
    for (const auto& [rank, _] : meds) r.implicated_ranks.insert(rank);
    r.evidence["efficiency_vs_ref"] = best / ref;
    r.evidence["time_share"] = sig_time[sig] / total_time;
    r.evidence["signature." + sig] = 1.0;
    out.push_back(std::move(r));
  }
  if (used_fallback && notes) {
    notes->push_back("flops: no baseline reference for some signatures; using the fastest signature in the job");
  }
  return out;
}

inline std::vector<AnomalyReport> bandwidth_verdicts(const std::vector<StepTimeline>& steady,
                                                     const std::optional<BaselineProfile>& baseline,
                                                     const Thresholds& th,
                                                     std::vector<std::string>* notes = nullptr) {
  std::map<std::string, std::vector<double>> by_sig;
  for (const auto& s : bandwidth_samples(steady)) by_sig[s.signature].push_back(s.bus_bandwidth);
  if (by_sig.empty()) return {};
  if (!baseline) {
    if (notes) notes->push_back("bandwidth: no baseline; slow_link verdict suppressed");
    return {};
  }
  double worst = 1.0;
  bool flagged = false;
  for (auto& [sig, xs] : by_sig) {
    auto it = baseline->bandwidth_ref.find(sig);
    if (it == baseline->bandwidth_ref.end() || it->second <= 0.0) continue;
    const double m = median(xs);
    if (m < (1.0 - th.bandwidth_low_frac) * it->second) {
      flagged = true;
      worst = std::min(worst, m / it->second);
    }
  }
  if (!flagged) return {};
  auto r = detail::make_report(AnomalyClass::kSlowLink, Family::kBandwidth, Confidence::kProbable);
  r.evidence["bandwidth_vs_ref"] = worst;
  return {r};
}

inline std::vector<AnomalyReport> issue_latency_verdicts(const std::vector<StepTimeline>& steady,
                                                         const std::optional<BaselineProfile>& baseline,
                                                         const Thresholds& th,
                                                         std::vector<std::string>* notes = nullptr) {
  const auto lat = issue_latencies(steady);
  if (lat.empty()) return {};
  if (!baseline || baseline->issue_latency_hist.empty()) {
    if (notes) notes->push_back("issue_latency: no baseline; kernel_issue_stall verdict suppressed");
    return {};
  }
  const auto hist = baseline->pooled_histogram();
  std::vector<Micros> pooled;
  std::map<int, std::vector<Micros>> per_rank;
  for (const auto& l : lat) {
    pooled.push_back(l.latency);
    per_rank[l.rank].push_back(l.latency);
  }
  const auto cmp = compare_cdf(pooled, hist, th);
  if (!cmp.stall) return {};

  auto r = detail::make_report(AnomalyClass::kKernelIssueStall, Family::kIssueLatency, Confidence::kProbable);
  r.evidence["ks_statistic"] = cmp.statistic;
  for (const auto& [rank, xs] : per_rank) {
    if (compare_cdf(xs, hist, th).stall) r.implicated_ranks.insert(rank);
  }
  std::vector<double> lags;
  std::vector<double> peaks;
  for (const auto& [rank, _] : per_rank) {
    const auto sig = periodic_signature(issue_gaps(steady, rank, kFirstSteadyStep), th.periodic_acf_min);
    lags.push_back(sig.lag);
    peaks.push_back(sig.peak);
  }
  const double lag = median(lags);
  r.evidence["periodic_lag"] = lag;
  r.evidence["periodic_peak"] = median(peaks);
  if (lag >= th.periodic_min_lag) {
    r.attribution = Team::kInfrastructure;
    r.also_notify = {Team::kAlgorithm};
  }
  return {r};
}

inline std::vector<AnomalyReport> void_verdicts(const std::vector<StepTimeline>& timelines,
                                                const Thresholds& th) {
  std::map<int, std::vector<double>> vi, vm;
  std::vector<double> all_vi, all_vm;
  for (const auto& v : void_percentages(timelines)) {
    if (v.step < kFirstSteadyStep) continue;
    vi[v.rank].push_back(v.v_inter);
    vm[v.rank].push_back(v.v_minority);
    all_vi.push_back(v.v_inter);
    all_vm.push_back(v.v_minority);
  }
  if (all_vi.empty()) return {};
  std::vector<AnomalyReport> out;
  const double mi = median(all_vi);
  if (mi > th.v_inter_max) {
    auto r = detail::make_report(AnomalyClass::kInterstepOverhead, Family::kVoid, Confidence::kProbable);
    r.evidence["v_inter"] = mi;
    for (auto& [rank, xs] : vi) {
      if (median(xs) > th.v_inter_max) r.implicated_ranks.insert(rank);
    }
    out.push_back(std::move(r));
  }
  const double mm = median(all_vm);
  if (mm > th.v_minority_max) {
    auto r = detail::make_report(AnomalyClass::kMinorityKernelBloat, Family::kVoid, Confidence::kProbable);
    r.evidence["v_minority"] = mm;
    for (auto& [rank, xs] : vm) {
      if (median(xs) > th.v_minority_max) r.implicated_ranks.insert(rank);
    }
    out.push_back(std::move(r));
  }
  return out;
}

struct ThroughputVerdict {
  bool drop = false;
  double drop_frac = 0.0;  // 1 - trailing / reference
  double reference = 0.0;
  double trailing = 0.0;
  int first_step = -1;  // first trailing-window step
};

inline ThroughputVerdict throughput_verdict(const std::vector<StepTimeline>& timelines,
                                            const std::optional<BaselineProfile>& baseline,
                                            const Thresholds& th) {
  ThroughputVerdict v;
  std::vector<ThroughputSample> series;
  for (const auto& s : throughput_series(timelines)) {
    if (s.step >= kFirstSteadyStep) series.push_back(s);
  }
  if (series.empty()) return v;
  const auto w = static_cast<std::size_t>(
      std::clamp<std::size_t>(series.size() / 4, 1, static_cast<std::size_t>(th.throughput_window)));
  std::vector<double> early, late;
  for (std::size_t i = 0; i < w; ++i) early.push_back(series[i].samples_per_sec);
  for (std::size_t i = series.size() - w; i < series.size(); ++i) late.push_back(series[i].samples_per_sec);
  v.reference = mean(early);
  if (baseline) v.reference = std::max(v.reference, baseline->throughput_mean);
  v.trailing = mean(late);
  v.first_step = series[series.size() - w].step;
  if (v.reference > 0.0) v.drop_frac = 1.0 - v.trailing / v.reference;
  v.drop = v.trailing < (1.0 - th.throughput_drop_frac) * v.reference;
  return v;
}

inline void sort_reports(std::vector<AnomalyReport>& reports) {
  std::stable_sort(reports.begin(), reports.end(), [](const auto& a, const auto& b) {
    return std::tie(a.step, a.family, a.anomaly, a.implicated_ranks) <
           std::tie(b.step, b.family, b.anomaly, b.implicated_ranks);
  });
}

inline DiagnoseResult diagnose(const DiagnoseInput& in) {
  validate(in.thresholds);
  const auto& th = in.thresholds;
  DiagnoseResult out;

  const auto alert = detect_hang(in.timelines, th);
  if (!in.stacks.empty() || alert) {
    out.reports.push_back(hang_report(classify_stacks(in.stacks), in.hung, alert));
    if (in.stacks.empty()) out.notes.push_back("hang: no call stacks captured; classification deferred");
    return out;
  }

  const auto steady = detail::steady_steps(in.timelines);
  if (!in.baseline) out.notes.push_back("baseline: none for this job key; running in degraded mode");
  for (auto& r : flops_verdicts(steady, in.baseline, th, &out.notes)) out.reports.push_back(std::move(r));
  for (auto& r : bandwidth_verdicts(steady, in.baseline, th, &out.notes)) out.reports.push_back(std::move(r));
  for (auto& r : issue_latency_verdicts(steady, in.baseline, th, &out.notes)) out.reports.push_back(std::move(r));
  for (auto& r : void_verdicts(in.timelines, th)) out.reports.push_back(std::move(r));

  const auto tv = throughput_verdict(in.timelines, in.baseline, th);
  if (tv.drop) {
    if (out.reports.empty()) {
      auto r = detail::make_report(AnomalyClass::kThroughputDrop, Family::kThroughput, Confidence::kProbable);
      r.evidence["drop_frac"] = tv.drop_frac;
      r.evidence["reference_samples_per_sec"] = tv.reference;
      r.evidence["trailing_samples_per_sec"] = tv.trailing;
      out.reports.push_back(std::move(r));
    } else {
      for (auto& r : out.reports) r.evidence["throughput_drop_frac"] = tv.drop_frac;
    }
  }
  sort_reports(out.reports);
  return out;
}

inline bool has_actionable(const std::vector<AnomalyReport>& reports) {
  return std::any_of(reports.begin(), reports.end(),
                     [](const auto& r) { return r.confidence >= Confidence::kProbable; });
}

}  // namespace xtrace

#endif  // XTRACE_DIAGNOSTICS_HPP_
