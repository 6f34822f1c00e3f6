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
#ifndef XTRACE_BASELINE_HPP_
#define XTRACE_BASELINE_HPP_

// Historical statistics from a healthy job, stored one file per key.

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "xtrace/metrics.hpp"
#include "xtrace/trace.hpp"

namespace xtrace {

// Steps before this index are warm-up and never enter baselines or metrics.
inline constexpr int kFirstSteadyStep = 1;

struct BaselineKey {
  std::string backbone;
  int world_size = 0;
  std::string model;

  auto operator<=>(const BaselineKey&) const = default;
};

struct BaselineProfile {
  BaselineKey key;
  std::map<std::string, Histogram> issue_latency_hist;  // per comm kernel name
  double throughput_mean = 0.0;
  double throughput_std = 0.0;
  std::map<std::string, double> flops_ref;      // matmul signature -> FLOPS
  std::map<std::string, double> bandwidth_ref;  // collective signature -> bytes/sec
  double v_inter_ref = 0.0;
  double v_minority_ref = 0.0;

  Histogram pooled_histogram() const {
    Histogram h{};
    for (const auto& [_, per] : issue_latency_hist) {
      for (int i = 0; i < kHistogramBuckets; ++i) h[i] += per[i];
    }
    return h;
  }

  friend bool operator==(const BaselineProfile&, const BaselineProfile&) = default;
};

class BaselineError : public TraceError {
 public:
  using TraceError::TraceError;
};

inline BaselineProfile baseline_record(const std::vector<StepTimeline>& timelines,
                                       const BaselineKey& key) {
  std::set<int> steps;
  for (const auto& t : timelines) steps.insert(t.step);
  if (steps.size() < 3) {
    throw BaselineError("baseline: too few steps (" + std::to_string(steps.size()) +
                        "), need at least 3");
  }
  std::vector<StepTimeline> steady;
  for (const auto& t : timelines) {
    if (t.step >= kFirstSteadyStep) steady.push_back(t);
  }

  BaselineProfile p;
  p.key = key;
  for (const auto& l : issue_latencies(steady)) {
    auto [it, _] = p.issue_latency_hist.try_emplace(l.name, Histogram{});
    add_to_histogram(it->second, l.latency);
  }

  std::vector<double> tput;
  for (const auto& s : throughput_series(steady)) tput.push_back(s.samples_per_sec);
  p.throughput_mean = mean(tput);
  p.throughput_std = stddev(tput);

  std::map<std::string, std::vector<double>> flops;
  for (const auto& s : flops_samples(steady)) {
    if (!s.overlapped) flops[s.signature].push_back(s.flops);
  }
  for (auto& [sig, xs] : flops) p.flops_ref[sig] = median(std::move(xs));

  std::map<std::string, std::vector<double>> bw;
  for (const auto& s : bandwidth_samples(steady)) bw[s.signature].push_back(s.bus_bandwidth);
  for (auto& [sig, xs] : bw) p.bandwidth_ref[sig] = median(std::move(xs));

  // Void samples need the previous step for the inter-step gap, so compute
  // them over the full trace and drop warm-up afterwards.
  std::vector<double> vi, vm;
  for (const auto& v : void_percentages(timelines)) {
    if (v.step < kFirstSteadyStep) continue;
    vi.push_back(v.v_inter);
    vm.push_back(v.v_minority);
  }
  p.v_inter_ref = mean(vi);
  p.v_minority_ref = mean(vm);
  return p;
}

// ---------------------------------------------------------------------------
// Text form: one key=value per line, fixed order.

inline std::string encode_baseline(const BaselineProfile& p) {
  std::ostringstream out;
  out << "backbone=" << p.key.backbone << '\n';
  out << "world_size=" << p.key.world_size << '\n';
  out << "model=" << p.key.model << '\n';
  out << "throughput_mean=" << format_double(p.throughput_mean) << '\n';
  out << "throughput_std=" << format_double(p.throughput_std) << '\n';
  out << "v_inter_ref=" << format_double(p.v_inter_ref) << '\n';
  out << "v_minority_ref=" << format_double(p.v_minority_ref) << '\n';
  for (const auto& [name, h] : p.issue_latency_hist) {
    out << "hist." << name << '=';
    for (int i = 0; i < kHistogramBuckets; ++i) out << (i ? "," : "") << h[i];
    out << '\n';
  }
  for (const auto& [sig, v] : p.flops_ref) out << "flops_ref." << sig << '=' << format_double(v) << '\n';
  for (const auto& [sig, v] : p.bandwidth_ref) {
    out << "bandwidth_ref." << sig << '=' << format_double(v) << '\n';
  }
  return out.str();
}

inline BaselineProfile decode_baseline(std::string_view text) {
  BaselineProfile p;
  auto real = [](std::string_view v) {
    auto d = parse_double(v);
    if (!d) throw BaselineError("baseline: bad number '" + std::string(v) + "'");
    return *d;
  };
  for (auto line : split(text, '\n')) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) throw BaselineError("baseline: malformed line");
    auto k = line.substr(0, eq);
    auto v = line.substr(eq + 1);
    if (k == "backbone") {
      p.key.backbone = std::string(v);
    } else if (k == "world_size") {
      auto i = parse_int(v);
      if (!i) throw BaselineError("baseline: bad world_size");
      p.key.world_size = static_cast<int>(*i);
    } else if (k == "model") {
      p.key.model = std::string(v);
    } else if (k == "throughput_mean") {
      p.throughput_mean = real(v);
    } else if (k == "throughput_std") {
      p.throughput_std = real(v);
    } else if (k == "v_inter_ref") {
      p.v_inter_ref = real(v);
    } else if (k == "v_minority_ref") {
      p.v_minority_ref = real(v);
    } else if (k.starts_with("hist.")) {
      Histogram h{};
      auto parts = split(v, ',');
      if (parts.size() != kHistogramBuckets) throw BaselineError("baseline: bad histogram width");
      for (int i = 0; i < kHistogramBuckets; ++i) {
        auto c = parse_int(parts[i]);
        if (!c || *c < 0) throw BaselineError("baseline: bad histogram count");
        h[i] = *c;
      }
      p.issue_latency_hist[std::string(k.substr(5))] = h;
    } else if (k.starts_with("flops_ref.")) {
      p.flops_ref[std::string(k.substr(10))] = real(v);
    } else if (k.starts_with("bandwidth_ref.")) {
      p.bandwidth_ref[std::string(k.substr(14))] = real(v);
    } else {
      throw BaselineError("baseline: unknown key " + std::string(k));
    }
  }
  return p;
}

// Percent-encodes everything outside [A-Za-z0-9_-].
inline std::string url_safe(std::string_view s) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char ch : s) {
    if (std::isalnum(ch) || ch == '_' || ch == '-') {
      out += static_cast<char>(ch);
    } else {
      out += '%';
      out += kHex[ch >> 4];
      out += kHex[ch & 15];
    }
  }
  return out;
}

inline std::string baseline_filename(const BaselineKey& key) {
  return url_safe(key.backbone) + "." + std::to_string(key.world_size) + "." +
         url_safe(key.model) + ".baseline";
}

class IoError : public TraceError {
 public:
  using TraceError::TraceError;
};

// Writes `content` next to `path` and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Directory-backed store. Writes are serialized; lookups may run concurrently.
class BaselineStore {
 public:
  explicit BaselineStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

  const std::filesystem::path& dir() const { return dir_; }

  std::filesystem::path path_for(const BaselineKey& key) const {
    return dir_ / baseline_filename(key);
  }

  // Returns true when an existing profile was replaced.
  bool save(const BaselineProfile& profile) {
    std::lock_guard lock(write_mu_);
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create " + dir_.string() + ": " + ec.message());
    const auto path = path_for(profile.key);
    const bool existed = std::filesystem::exists(path);
    write_file_atomic(path, encode_baseline(profile));
    return existed;
  }

  std::optional<BaselineProfile> lookup(const BaselineKey& key) const {
    const auto path = path_for(key);
    if (!std::filesystem::exists(path)) return std::nullopt;
    auto p = decode_baseline(read_file(path));
    if (p.key != key) return std::nullopt;
    return p;
  }

 private:
  std::filesystem::path dir_;
  std::mutex write_mu_;
};

inline std::optional<BaselineProfile> baseline_lookup(const BaselineStore& store,
                                                      const BaselineKey& key) {
  return store.lookup(key);
}

}  // namespace xtrace

#endif  // XTRACE_BASELINE_HPP_
