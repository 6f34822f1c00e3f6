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
#ifndef XTRACE_REPORT_HPP_
#define XTRACE_REPORT_HPP_

#include <algorithm>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "xtrace/codec.hpp"
#include "xtrace/diagnostics.hpp"
#include "xtrace/trace.hpp"

namespace xtrace {

// Report file: one `kind=report` line per AnomalyReport, then `kind=note`
// lines whose message runs to the end of the line. Empty sets are "-".

namespace detail {

inline constexpr std::string_view kNotePrefix = "kind=note msg=";

template <typename Set, typename F>
std::string join_set(const Set& xs, F&& fmt) {
  if (xs.empty()) return "-";
  std::string out;
  for (const auto& x : xs) {
    if (!out.empty()) out += ',';
    out += fmt(x);
  }
  return out;
}

}  // namespace detail

inline std::string encode_report(const AnomalyReport& r) {
  std::string line = "kind=report step=" + format_int(r.step);
  line += " family=" + std::string(to_string(r.family));
  line += " anomaly=" + std::string(to_string(r.anomaly));
  line += " confidence=" + std::string(to_string(r.confidence));
  line += " attribution=" + std::string(to_string(r.attribution));
  line += " notify=" + detail::join_set(r.also_notify, [](Team t) { return std::string(to_string(t)); });
  line += " ranks=" + detail::join_set(r.implicated_ranks, [](int x) { return format_int(x); });
  line += " links=" + detail::join_set(r.implicated_links, [](const RankLink& l) {
    return format_int(l.first) + "-" + format_int(l.second);
  });
  for (const auto& [k, v] : r.evidence) {
    detail::require_token(k, "evidence key");
    line += " ev." + k + "=" + format_double(v);
  }
  return line;
}

inline std::string encode_reports(const DiagnoseResult& res) {
  std::string out;
  for (const auto& r : res.reports) out += encode_report(r) + "\n";
  for (const auto& n : res.notes) {
    if (n.find('\n') != std::string::npos) throw TraceError("report: note contains a newline");
    out += std::string(detail::kNotePrefix) + n + "\n";
  }
  return out;
}

inline AnomalyReport decode_report(std::string_view line) {
  const detail::Fields f(line);
  if (f.str("kind") != "report") throw TraceError("report: not a report line");
  auto need = [](auto opt, std::string_view what, std::string_view v) {
    if (!opt) throw TraceError("report: bad " + std::string(what) + " '" + std::string(v) + "'");
    return *opt;
  };
  AnomalyReport r;
  r.step = static_cast<int>(f.integer("step"));
  r.family = need(parse_family(f.str("family")), "family", f.str("family"));
  r.anomaly = need(parse_anomaly_class(f.str("anomaly")), "anomaly", f.str("anomaly"));
  r.confidence = need(parse_confidence(f.str("confidence")), "confidence", f.str("confidence"));
  r.attribution = need(parse_team(f.str("attribution")), "attribution", f.str("attribution"));
  if (auto v = f.str("notify"); v != "-") {
    for (auto t : split(v, ',')) r.also_notify.insert(need(parse_team(t), "team", t));
  }
  if (auto v = f.str("ranks"); v != "-") {
    for (auto x : f.int_list("ranks")) r.implicated_ranks.insert(static_cast<int>(x));
  }
  if (auto v = f.str("links"); v != "-") {
    for (auto l : split(v, ',')) {
      const auto dash = l.find('-', 1);
      auto a = dash == std::string_view::npos ? std::nullopt : parse_int(l.substr(0, dash));
      auto b = dash == std::string_view::npos ? std::nullopt : parse_int(l.substr(dash + 1));
      if (!a || !b) throw TraceError("report: bad link '" + std::string(l) + "'");
      r.implicated_links.insert({static_cast<int>(*a), static_cast<int>(*b)});
    }
  }
  for (const auto& [k, v] : f.items()) {
    if (k.substr(0, 3) != "ev.") continue;
    auto d = parse_double(v);
    if (!d) throw TraceError("report: bad evidence value '" + std::string(v) + "'");
    r.evidence[std::string(k.substr(3))] = *d;
  }
  return r;
}

inline DiagnoseResult decode_reports(std::string_view text) {
  DiagnoseResult res;
  int line_no = 0;
  for (auto line : split(text, '\n')) {
    ++line_no;
    if (line.empty()) continue;
    try {
      if (line.substr(0, detail::kNotePrefix.size()) == detail::kNotePrefix) {
        res.notes.emplace_back(line.substr(detail::kNotePrefix.size()));
      } else {
        res.reports.push_back(decode_report(line));
      }
    } catch (const TraceError& e) {
      throw TraceError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return res;
}

inline std::string render_table(const DiagnoseResult& res) {
  std::ostringstream out;
  if (res.reports.empty()) {
    out << "no anomalies\n";
  } else {
    auto reports = res.reports;
    sort_reports(reports);
    out << std::left << std::setw(6) << "step" << std::setw(15) << "family" << std::setw(23) << "anomaly"
        << std::setw(15) << "confidence" << std::setw(26) << "team" << std::setw(18) << "ranks"
        << "evidence\n";
    for (const auto& r : reports) {
      std::string team(to_string(r.attribution));
      for (auto t : r.also_notify) team += "+" + std::string(to_string(t));
      std::string ev;
      for (const auto& [k, v] : r.evidence) {
        std::ostringstream one;
        one << k << "=" << std::setprecision(4) << v;
        ev += (ev.empty() ? "" : " ") + one.str();
      }
      out << std::setw(6) << (r.step < 0 ? std::string("job") : format_int(r.step))
          << std::setw(15) << to_string(r.family) << std::setw(23) << to_string(r.anomaly)
          << std::setw(15) << to_string(r.confidence) << std::setw(26) << team << std::setw(18)
          << detail::join_set(r.implicated_ranks, [](int x) { return format_int(x); }) << ev << "\n";
    }
  }
  for (const auto& n : res.notes) out << "note: " << n << "\n";
  return out.str();
}

inline std::string render_lines(const DiagnoseResult& res) {
  auto sorted = res;
  sort_reports(sorted.reports);
  return encode_reports(sorted);
}

}  // namespace xtrace

#endif  // XTRACE_REPORT_HPP_
