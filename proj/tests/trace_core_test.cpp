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

#include <cmath>
#include <filesystem>
#include <random>
#include <thread>

#include "oracles.hpp"
#include "xtrace/baseline.hpp"
#include "xtrace/codec.hpp"
#include "xtrace/sim.hpp"
#include "xtrace/trace.hpp"
#include "xtrace/validate.hpp"

namespace xtrace {
namespace {

using testing::random_record;

TEST(Codec, RandomRecordsRoundTrip) {
  std::mt19937_64 rng(12345);
  for (int i = 0; i < 10'000; ++i) {
    const auto r = random_record(rng);
    const auto line = encode_record(r);
    ASSERT_EQ(decode_record(line), r) << line;
    ASSERT_EQ(encode_record(decode_record(line)), line);
  }
}

TEST(Codec, KeyOrderIsFixedAndAttrsSorted) {
  TraceRecord r;
  r.kind = RecordKind::kGpuComm;
  r.name = "allreduce";
  r.issue_ts = 5;
  r.start_ts = 7;
  r.end_ts = 10;
  r.stream = kCommStream;
  r.attrs = {{"group_size", 2}, {"bytes", 64}, {"collective_seq", 3}};
  EXPECT_EQ(encode_record(r),
            "kind=gpu_comm rank=0 step=0 name=allreduce ts=5 wait=2 dur=3 bytes=64 "
            "collective_seq=3 group_size=2");
  r.stream = 4;
  EXPECT_NE(encode_record(r).find(" stream=4"), std::string::npos);
}

TEST(Codec, RejectsBadInput) {
  TraceRecord r;
  r.name = "has space";
  EXPECT_THROW(encode_record(r), TraceError);
  r.name = "ok";
  r.issue_ts = 10;
  r.start_ts = 5;
  r.end_ts = 20;
  EXPECT_THROW(encode_record(r), TraceError);
  r.start_ts = 10;
  r.attrs["rank"] = 1;
  EXPECT_THROW(encode_record(r), TraceError);
  EXPECT_THROW(decode_record("kind=bogus rank=0 step=0 name=x ts=0 wait=0 dur=0"), TraceError);
  EXPECT_THROW(decode_record("kind=py_api rank=0 step=0 name=x ts=0 wait=-1 dur=0"), TraceError);
  EXPECT_THROW(decode_record("kind=py_api rank=0 name=x ts=0 wait=0 dur=0"), TraceError);
  EXPECT_THROW(decode_record("kind=py_api rank=zero step=0 name=x ts=0 wait=0 dur=0"), TraceError);
  EXPECT_THROW(decode_trace_file("kind=job backbone=m\n"), TraceError);
}

TEST(Codec, DecodeErrorNamesTheLine) {
  try {
    decode_trace_file("kind=job backbone=a world_size=1 model=b global_batch=1\nnot a record\n");
    FAIL();
  } catch (const TraceError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Codec, DoublesAreDecimalAndRoundTrip) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> mant(-1.0, 1.0);
  std::uniform_int_distribution<int> expo(-30, 30);
  for (int i = 0; i < 5000; ++i) {
    const double v = mant(rng) * std::pow(10.0, expo(rng));
    const auto s = format_double(v);
    ASSERT_EQ(s.find_first_of("eE"), std::string::npos) << s;
    ASSERT_EQ(parse_double(s), v) << s;
  }
  EXPECT_EQ(format_double(0.0), "0");
  EXPECT_FALSE(parse_double("1e5").has_value());
}

TEST(Codec, TraceFileRoundTripFromSimulator) {
  auto s = scenario("comm_hang_rank_2");
  s.config.steps = 6;
  const auto out = simulate(s.config, s.anomalies);
  const auto file = to_trace_file(out);
  ASSERT_FALSE(file.stacks.empty());
  ASSERT_EQ(file.hung.size(), 1u);
  EXPECT_EQ(decode_trace_file(encode_trace_file(file)), file);
}

TEST(Codec, GroundTruthNeverInTraceText) {
  const auto s = scenario("underclock_14pct");
  auto cfg = s.config;
  cfg.steps = 3;
  const auto text = encode_trace_file(to_trace_file(simulate(cfg, s.anomalies)));
  EXPECT_EQ(text.find("underclock"), std::string::npos);
  EXPECT_EQ(text.find("target_rank"), std::string::npos);
}

// ---------------------------------------------------------------------------

std::vector<TraceRecord> tiny_step_records() {
  auto rec = [](RecordKind k, std::string name, int step, Micros i, Micros s, Micros e) {
    TraceRecord r;
    r.kind = k;
    r.name = std::move(name);
    r.step = step;
    r.issue_ts = i;
    r.start_ts = s;
    r.end_ts = e;
    r.stream = default_stream(k);
    return r;
  };
  auto comm = [&](int step, Micros i, Micros s, Micros e, int rank, std::int64_t seq) {
    auto r = rec(RecordKind::kGpuComm, "allreduce", step, i, s, e);
    r.rank = rank;
    r.attrs = {{"bytes", 64}, {"group_size", 2}, {"collective_seq", seq}};
    return r;
  };
  std::vector<TraceRecord> out;
  for (int rank = 0; rank < 2; ++rank) {
    for (int step = 0; step < 2; ++step) {
      const Micros b = step * 100;
      auto dl = rec(RecordKind::kPyApi, "dataloader.next", step, b, b, b + 5);
      auto mm = rec(RecordKind::kGpuCompute, "matmul", step, b + 6, b + 10, b + 50);
      dl.rank = mm.rank = rank;
      out.push_back(dl);
      out.push_back(mm);
      out.push_back(comm(step, b + 7, b + 50, b + 80, rank, step));
    }
  }
  return out;
}

TEST(Timelines, GroupingAndStepBounds) {
  const auto t = group_timelines(tiny_step_records());
  ASSERT_EQ(t.size(), 4u);
  EXPECT_EQ(t[0].rank, 0);
  EXPECT_EQ(t[0].step, 0);
  EXPECT_EQ(t[0].step_begin_ts, 0);
  EXPECT_EQ(t[0].step_end_ts, 100);  // next dataloader issue
  EXPECT_EQ(t[1].step_end_ts, 180);  // last record end
  EXPECT_EQ(t[0].records.front().name, "dataloader.next");
  EXPECT_TRUE(validate_trace(t).ok);
}

TEST(Validate, EachRuleFires) {
  auto check = [](std::vector<TraceRecord> recs, const char* rule) {
    const auto v = validate_trace(group_timelines(std::move(recs)));
    EXPECT_FALSE(v.ok);
    EXPECT_EQ(v.rule, rule) << v.message;
  };
  {
    auto r = tiny_step_records();
    r[1].start_ts = r[1].issue_ts - 1;
    check(r, rules::kTimestampOrder);
  }
  {
    auto r = tiny_step_records();
    r[0].start_ts = r[0].issue_ts + 1;
    check(r, rules::kPyApiSync);
  }
  {
    auto r = tiny_step_records();
    r[2].attrs.erase("collective_seq");
    check(r, rules::kCommAttrs);
  }
  {
    auto r = tiny_step_records();
    r[2].attrs["group_size"] = 1;
    check(r, rules::kCommAttrs);
  }
  {
    auto t = group_timelines(tiny_step_records());
    t[0].step_end_ts = 79;
    EXPECT_EQ(validate_trace(t).rule, rules::kStepEnd);
  }
  {
    auto r = tiny_step_records();
    r.erase(r.begin());
    check(r, rules::kDataloaderOpen);
  }
  {
    auto r = tiny_step_records();
    r[2].attrs["bytes"] = 128;
    check(r, rules::kCollectiveSeq);
  }
  {
    auto r = tiny_step_records();
    r.erase(r.begin() + 2);
    check(r, rules::kCollectiveSeq);
  }
  {
    // Unsorted issue order within a timeline (bypasses group_timelines' sort).
    auto t = group_timelines(tiny_step_records());
    std::swap(t[0].records[1], t[0].records[2]);
    const auto v = validate_trace(t);
    EXPECT_EQ(v.rule, rules::kSortedIssue);
  }
}

TEST(Validate, SimulatorOutputIsValid) {
  for (const char* name : {"healthy", "unhealthy_gc", "comm_hang_rank_5", "crash_rank_1"}) {
    auto s = scenario(name);
    s.config.steps = 6;
    const auto v = validate_trace(simulate(s.config, s.anomalies).timelines);
    EXPECT_TRUE(v.ok) << name << ": " << v.rule << " " << v.message;
  }
}

// ---------------------------------------------------------------------------

class BaselineTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("xtrace_baseline_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
            "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::remove_all(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(BaselineTest, RecordSerializeLookup) {
  auto s = scenario("healthy");
  s.config.steps = 6;
  const auto out = simulate(s.config, {});
  const BaselineKey key{"megatron", 8, "llama-8l"};
  const auto p = baseline_record(out.timelines, key);
  EXPECT_GT(p.throughput_mean, 0.0);
  EXPECT_FALSE(p.flops_ref.empty());
  EXPECT_FALSE(p.bandwidth_ref.empty());
  EXPECT_EQ(decode_baseline(encode_baseline(p)), p);

  BaselineStore store(dir_);
  EXPECT_FALSE(store.save(p));
  EXPECT_TRUE(store.save(p));  // overwrite reported
  EXPECT_EQ(baseline_lookup(store, key), p);
  EXPECT_FALSE(baseline_lookup(store, BaselineKey{"fsdp", 8, "llama-8l"}).has_value());
}

TEST_F(BaselineTest, TooFewSteps) {
  auto s = scenario("healthy");
  s.config.steps = 2;
  EXPECT_THROW(baseline_record(simulate(s.config, {}).timelines, {"m", 8, "x"}), BaselineError);
}

TEST_F(BaselineTest, ConcurrentSavesLeaveOneValidFile) {
  auto s = scenario("healthy");
  s.config.steps = 4;
  const auto p = baseline_record(simulate(s.config, {}).timelines, {"megatron", 8, "llama-8l"});
  BaselineStore store(dir_);
  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i) threads.emplace_back([&] { store.save(p); });
  for (auto& t : threads) t.join();
  EXPECT_EQ(store.lookup(p.key), p);
  int files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir_)) ++files;
  EXPECT_EQ(files, 1);
}

TEST(BaselineKey, FilenameIsUrlSafe) {
  EXPECT_EQ(baseline_filename({"mega tron", 16, "a/b"}), "mega%20tron.16.a%2Fb.baseline");
  EXPECT_EQ(url_safe("Az09_-"), "Az09_-");
}

}  // namespace
}  // namespace xtrace
