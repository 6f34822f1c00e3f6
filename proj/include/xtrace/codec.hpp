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
#ifndef XTRACE_CODEC_HPP_
#define XTRACE_CODEC_HPP_

// Line-delimited text codec for `.xtrace` files. Every line is a sequence of
// space-separated key=value tokens in a fixed key order, starting with `kind=`.
// Record attributes follow the fixed fields in lexicographic key order.
//
//   kind=job backbone=megatron world_size=8 model=llama global_batch=4
//   kind=gpu_compute rank=0 step=1 name=matmul issue=10 start=12 end=90 stream=0 dtype_bytes=2 k=8 m=4 n=4
//   kind=stack rank=3 present=1 ts=500 seq=17 frames=allreduce,backward,train_step
//   kind=ring_snapshot name=allreduce seq=17 group=0,1,2,3 ... send=... recv=...

#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "xtrace/ring.hpp"
#include "xtrace/trace.hpp"

namespace xtrace {

struct JobInfo {
  std::string backbone = "megatron";
  int world_size = 1;
  std::string model = "model";
  std::int64_t global_batch = 1;

  friend bool operator==(const JobInfo&, const JobInfo&) = default;
};

// Counter dump of one collective that never completed.
struct HungCollective {
  std::string name;
  std::int64_t collective_seq = 0;
  std::vector<int> group;  // ring position -> global rank
  RingSnapshot snapshot;

  friend bool operator==(const HungCollective&, const HungCollective&) = default;
};

struct TraceFile {
  std::optional<JobInfo> job;
  std::vector<TraceRecord> records;
  std::vector<CallStackSnapshot> stacks;
  std::vector<HungCollective> hung;

  friend bool operator==(const TraceFile&, const TraceFile&) = default;
};

namespace detail {

inline bool is_token_safe(std::string_view s) {
  if (s.empty()) return false;
  for (char ch : s) {
    if (ch == ' ' || ch == '=' || ch == ',' || ch == '\n' || ch == '\r' || ch == '\t') {
      return false;
    }
  }
  return true;
}

inline void require_token(std::string_view s, std::string_view what) {
  if (!is_token_safe(s)) {
    throw TraceError("codec: " + std::string(what) + " '" + std::string(s) +
                     "' is empty or contains a reserved character");
  }
}

inline bool is_reserved_key(std::string_view k) {
  for (std::string_view r : {"kind", "rank", "step", "name", "ts", "wait", "dur", "stream",
                             "issue", "start", "end"}) {
    if (k == r) return true;
  }
  return false;
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_same_v<T, std::string>) {
      out += xs[i];
    } else {
      out += std::to_string(xs[i]);
    }
  }
  return out;
}

// Parsed line: ordered key/value tokens.
class Fields {
 public:
  explicit Fields(std::string_view line) {
    for (auto tok : split(line, ' ')) {
      auto eq = tok.find('=');
      if (eq == std::string_view::npos) {
        throw TraceError("codec: token without '=': " + std::string(tok));
      }
      items_.emplace_back(tok.substr(0, eq), tok.substr(eq + 1));
    }
  }

  const std::vector<std::pair<std::string_view, std::string_view>>& items() const {
    return items_;
  }

  std::optional<std::string_view> find(std::string_view key) const {
    for (const auto& [k, v] : items_) {
      if (k == key) return v;
    }
    return std::nullopt;
  }

  std::string_view str(std::string_view key) const {
    auto v = find(key);
    if (!v) throw TraceError("codec: missing field " + std::string(key));
    return *v;
  }

  std::int64_t integer(std::string_view key) const {
    auto v = parse_int(str(key));
    if (!v) throw TraceError("codec: field " + std::string(key) + " is not an integer");
    return *v;
  }

  double real(std::string_view key) const {
    auto v = parse_double(str(key));
    if (!v) throw TraceError("codec: field " + std::string(key) + " is not a number");
    return *v;
  }

  std::vector<std::int64_t> int_list(std::string_view key) const {
    std::vector<std::int64_t> out;
    for (auto part : split(str(key), ',')) {
      auto v = parse_int(part);
      if (!v) throw TraceError("codec: bad list entry in " + std::string(key));
      out.push_back(*v);
    }
    return out;
  }

 private:
  std::vector<std::pair<std::string_view, std::string_view>> items_;
};

}  // namespace detail

inline std::string encode_record(const TraceRecord& r) {
  if (!(r.issue_ts <= r.start_ts && r.start_ts <= r.end_ts)) {
    throw TraceError("codec: record '" + r.name + "' violates issue <= start <= end");
  }
  detail::require_token(r.name, "record name");
  std::string line;
  line.reserve(128);
  line += "kind=";
  line += to_string(r.kind);
  line += " rank=" + format_int(r.rank);
  line += " step=" + format_int(r.step);
  line += " name=" + r.name;
  line += " ts=" + format_int(r.issue_ts);
  line += " wait=" + format_int(r.start_ts - r.issue_ts);
  line += " dur=" + format_int(r.end_ts - r.start_ts);
  if (r.stream != default_stream(r.kind)) line += " stream=" + format_int(r.stream);
  for (const auto& [k, v] : r.attrs) {
    detail::require_token(k, "attribute key");
    if (detail::is_reserved_key(k)) throw TraceError("codec: reserved attribute key " + k);
    line += ' ';
    line += k;
    line += '=';
    line += format_int(v);
  }
  return line;
}

inline std::string encode_records(std::span<const TraceRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += encode_record(r);
    out += '\n';
  }
  return out;
}

inline TraceRecord decode_record_fields(const detail::Fields& f) {
  TraceRecord r;
  auto kind = parse_record_kind(f.str("kind"));
  if (!kind) throw TraceError("codec: unknown record kind " + std::string(f.str("kind")));
  r.kind = *kind;
  r.rank = static_cast<int>(f.integer("rank"));
  r.step = static_cast<int>(f.integer("step"));
  r.name = std::string(f.str("name"));
  const auto wait = f.integer("wait");
  const auto dur = f.integer("dur");
  if (wait < 0 || dur < 0) throw TraceError("codec: negative wait or dur");
  r.issue_ts = f.integer("ts");
  r.start_ts = r.issue_ts + wait;
  r.end_ts = r.start_ts + dur;
  r.stream = f.find("stream") ? static_cast<int>(f.integer("stream")) : default_stream(r.kind);
  for (const auto& [k, v] : f.items()) {
    if (detail::is_reserved_key(k)) continue;
    auto iv = parse_int(v);
    if (!iv) throw TraceError("codec: attribute " + std::string(k) + " is not an integer");
    r.attrs.emplace(std::string(k), *iv);
  }
  return r;
}

inline TraceRecord decode_record(std::string_view line) {
  return decode_record_fields(detail::Fields(line));
}

inline std::vector<TraceRecord> decode_records(std::string_view text) {
  std::vector<TraceRecord> out;
  for (auto line : split(text, '\n')) {
    if (line.empty()) continue;
    out.push_back(decode_record(line));
  }
  return out;
}

inline std::string encode_job(const JobInfo& j) {
  detail::require_token(j.backbone, "backbone");
  detail::require_token(j.model, "model");
  return "kind=job backbone=" + j.backbone + " world_size=" + format_int(j.world_size) +
         " model=" + j.model + " global_batch=" + format_int(j.global_batch);
}

inline std::string encode_stack(const CallStackSnapshot& s) {
  for (const auto& fr : s.frames) detail::require_token(fr, "frame label");
  std::string line = "kind=stack rank=" + format_int(s.rank) +
                     " present=" + (s.present ? std::string("1") : std::string("0")) +
                     " ts=" + format_int(s.captured_ts);
  if (s.collective_seq) line += " seq=" + format_int(*s.collective_seq);
  if (!s.frames.empty()) line += " frames=" + detail::join(s.frames);
  return line;
}

inline std::string encode_ring_snapshot(const HungCollective& h) {
  detail::require_token(h.name, "collective name");
  const auto& c = h.snapshot.config;
  return "kind=ring_snapshot name=" + h.name + " seq=" + format_int(h.collective_seq) +
         " group=" + detail::join(h.group) + " n_ranks=" + format_int(c.n_ranks) +
         " n_channels=" + format_int(c.n_channels) + " chunks=" + format_int(c.chunks) +
         " fifo_depth=" + format_int(c.fifo_depth) + " protocol=" +
         std::string(to_string(c.protocol)) +
         " threads_per_block=" + format_int(c.threads_per_block) +
         " scanned_threads=" + format_int(h.snapshot.scanned_threads) +
         " cost=" + format_double(h.snapshot.cost) +
         " send=" + detail::join(h.snapshot.send_step) +
         " recv=" + detail::join(h.snapshot.recv_step);
}

inline std::string encode_trace_file(const TraceFile& file) {
  std::string out;
  if (file.job) out += encode_job(*file.job) + '\n';
  out += encode_records(file.records);
  for (const auto& s : file.stacks) out += encode_stack(s) + '\n';
  for (const auto& h : file.hung) out += encode_ring_snapshot(h) + '\n';
  return out;
}

inline TraceFile decode_trace_file(std::string_view text) {
  TraceFile file;
  std::size_t line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (line.empty()) continue;
    try {
      detail::Fields f(line);
      const auto kind = f.str("kind");
      if (kind == "job") {
        JobInfo j;
        j.backbone = std::string(f.str("backbone"));
        j.world_size = static_cast<int>(f.integer("world_size"));
        j.model = std::string(f.str("model"));
        j.global_batch = f.integer("global_batch");
        file.job = j;
      } else if (kind == "stack") {
        CallStackSnapshot s;
        s.rank = static_cast<int>(f.integer("rank"));
        s.present = f.integer("present") != 0;
        s.captured_ts = f.integer("ts");
        if (f.find("seq")) s.collective_seq = f.integer("seq");
        if (auto frames = f.find("frames")) {
          for (auto fr : split(*frames, ',')) s.frames.emplace_back(fr);
        }
        file.stacks.push_back(std::move(s));
      } else if (kind == "ring_snapshot") {
        HungCollective h;
        h.name = std::string(f.str("name"));
        h.collective_seq = f.integer("seq");
        for (auto g : f.int_list("group")) h.group.push_back(static_cast<int>(g));
        auto& c = h.snapshot.config;
        c.n_ranks = static_cast<int>(f.integer("n_ranks"));
        c.n_channels = static_cast<int>(f.integer("n_channels"));
        c.chunks = static_cast<int>(f.integer("chunks"));
        c.fifo_depth = static_cast<int>(f.integer("fifo_depth"));
        auto p = parse_protocol(f.str("protocol"));
        if (!p) throw TraceError("codec: unknown protocol");
        c.protocol = *p;
        c.threads_per_block = static_cast<int>(f.integer("threads_per_block"));
        h.snapshot.scanned_threads = f.integer("scanned_threads");
        h.snapshot.cost = f.real("cost");
        h.snapshot.send_step = f.int_list("send");
        h.snapshot.recv_step = f.int_list("recv");
        const auto expected = static_cast<std::size_t>(c.n_ranks) * c.n_channels;
        if (h.snapshot.send_step.size() != expected || h.snapshot.recv_step.size() != expected ||
            h.group.size() != static_cast<std::size_t>(c.n_ranks)) {
          throw TraceError("codec: ring snapshot counter count mismatch");
        }
        file.hung.push_back(std::move(h));
      } else {
        file.records.push_back(decode_record_fields(f));
      }
    } catch (const TraceError& e) {
      throw TraceError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return file;
}

}  // namespace xtrace

#endif  // XTRACE_CODEC_HPP_
