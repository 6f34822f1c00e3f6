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
#ifndef XTRACE_VALIDATE_HPP_
#define XTRACE_VALIDATE_HPP_

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "xtrace/trace.hpp"

namespace xtrace {

// Rule identifiers reported by validate_trace.
namespace rules {
inline constexpr const char* kTimestampOrder = "timestamp_order";
inline constexpr const char* kPyApiSync = "py_api_sync";
inline constexpr const char* kCommAttrs = "comm_attrs";
inline constexpr const char* kSortedIssue = "sorted_issue";
inline constexpr const char* kStepEnd = "step_end";
inline constexpr const char* kDataloaderOpen = "dataloader_open";
inline constexpr const char* kCollectiveSeq = "collective_seq";
}  // namespace rules

struct ValidationResult {
  bool ok = true;
  std::string rule;
  std::size_t timeline_index = 0;
  std::size_t record_index = 0;
  std::string message;

  explicit operator bool() const { return ok; }
};

namespace detail {

inline ValidationResult violation(const char* rule, std::size_t t, std::size_t r,
                                  std::string message) {
  return ValidationResult{false, rule, t, r, std::move(message)};
}

}  // namespace detail

// Returns the first violated rule, scanning timelines in order and records in
// order within each timeline. Cross-rank collective checks run last.
inline ValidationResult validate_trace(const std::vector<StepTimeline>& timelines) {
  struct CollectiveSeen {
    std::string name;
    std::int64_t bytes = 0;
    std::int64_t group_size = 0;
    std::set<int> ranks;
    std::size_t first_timeline = 0;
    std::size_t first_record = 0;
  };
  std::map<std::int64_t, CollectiveSeen> collectives;

  for (std::size_t ti = 0; ti < timelines.size(); ++ti) {
    const auto& t = timelines[ti];
    std::size_t dataloaders = 0;
    for (std::size_t ri = 0; ri < t.records.size(); ++ri) {
      const auto& r = t.records[ri];
      if (!(r.issue_ts <= r.start_ts && r.start_ts <= r.end_ts)) {
        return detail::violation(rules::kTimestampOrder, ti, ri,
                                 "issue_ts <= start_ts <= end_ts violated by " + r.name);
      }
      if (r.kind == RecordKind::kPyApi && r.issue_ts != r.start_ts) {
        return detail::violation(rules::kPyApiSync, ti, ri,
                                 "py_api record " + r.name + " has issue_ts != start_ts");
      }
      if (ri > 0 && t.records[ri - 1].issue_ts > r.issue_ts) {
        return detail::violation(rules::kSortedIssue, ti, ri, "records not sorted by issue_ts");
      }
      if (r.end_ts > t.step_end_ts) {
        return detail::violation(rules::kStepEnd, ti, ri, "record ends after step end");
      }
      if (r.name == names::kDataloader) {
        ++dataloaders;
        if (r.issue_ts != t.step_begin_ts || r.issue_ts != t.records.front().issue_ts) {
          return detail::violation(rules::kDataloaderOpen, ti, ri,
                                   "dataloader.next does not open the step");
        }
      }
      if (r.kind == RecordKind::kGpuComm) {
        const auto bytes = r.attr_or("bytes", 0);
        const auto group = r.attr_or("group_size", 0);
        const auto seq = r.attr("collective_seq");
        if (bytes <= 0 || group < 2 || !seq) {
          return detail::violation(rules::kCommAttrs, ti, ri,
                                   "comm record needs bytes > 0, group_size >= 2, collective_seq");
        }
        auto [it, inserted] = collectives.try_emplace(*seq);
        auto& c = it->second;
        if (inserted) {
          c.name = r.name;
          c.bytes = bytes;
          c.group_size = group;
          c.first_timeline = ti;
          c.first_record = ri;
        } else if (c.name != r.name || c.bytes != bytes || c.group_size != group) {
          return detail::violation(rules::kCollectiveSeq, ti, ri,
                                   "collective_seq " + std::to_string(*seq) +
                                       " shared by differing collectives");
        }
        if (!c.ranks.insert(r.rank).second) {
          return detail::violation(rules::kCollectiveSeq, ti, ri,
                                   "collective_seq " + std::to_string(*seq) +
                                       " repeated on rank " + std::to_string(r.rank));
        }
      }
    }
    if (!t.records.empty() && dataloaders != 1) {
      return detail::violation(rules::kDataloaderOpen, ti, 0,
                               "step must contain exactly one dataloader.next, found " +
                                   std::to_string(dataloaders));
    }
  }
  for (const auto& [seq, c] : collectives) {
    if (static_cast<std::int64_t>(c.ranks.size()) != c.group_size) {
      return detail::violation(rules::kCollectiveSeq, c.first_timeline, c.first_record,
                               "collective_seq " + std::to_string(seq) + " seen on " +
                                   std::to_string(c.ranks.size()) + " of " +
                                   std::to_string(c.group_size) + " ranks");
    }
  }
  return {};
}

}  // namespace xtrace

#endif  // XTRACE_VALIDATE_HPP_
