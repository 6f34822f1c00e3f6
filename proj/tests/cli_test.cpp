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
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#ifndef XTRACE_CLI
#error "XTRACE_CLI must name the CLI binary"
#endif

namespace {

namespace fs = std::filesystem;

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           (std::string("xtrace_cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  CliResult run(const std::string& args) {
    const auto out = dir_ / "stdout.txt";
    const auto err = dir_ / "stderr.txt";
    const std::string cmd = std::string("'") + XTRACE_CLI + "' " + args + " >'" + out.string() +
                            "' 2>'" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

TEST_F(Cli, SimulateIsByteIdentical) {
  ASSERT_EQ(run("simulate unhealthy_gc --out " + path("a")).code, 0);
  ASSERT_EQ(run("simulate unhealthy_gc --out " + path("b")).code, 0);
  EXPECT_EQ(slurp(path("a/unhealthy_gc.xtrace")), slurp(path("b/unhealthy_gc.xtrace")));
  EXPECT_EQ(slurp(path("a/unhealthy_gc.truth")), slurp(path("b/unhealthy_gc.truth")));
  const auto manifest = slurp(path("a/unhealthy_gc.manifest"));
  EXPECT_NE(manifest.find("seed=1"), std::string::npos) << manifest;
  EXPECT_NE(manifest.find("wall_seconds="), std::string::npos);
  ASSERT_EQ(run("simulate unhealthy_gc --seed 2 --out " + path("c")).code, 0);
  EXPECT_NE(slurp(path("a/unhealthy_gc.xtrace")), slurp(path("c/unhealthy_gc.xtrace")));
}

TEST_F(Cli, TruthNamesTheTarget) {
  ASSERT_EQ(run("simulate comm_hang_rank_2 --out " + path("")).code, 0);
  const auto truth = slurp(path("comm_hang_rank_2.truth"));
  EXPECT_NE(truth.find("kind=comm_hang target_rank=2"), std::string::npos) << truth;
  EXPECT_EQ(slurp(path("comm_hang_rank_2.xtrace")).find("comm_hang"), std::string::npos);
  ASSERT_EQ(run("simulate healthy --out " + path("")).code, 0);
  EXPECT_EQ(slurp(path("healthy.truth")).rfind("kind=none", 0), 0u);
}

TEST_F(Cli, ConfigFileAndErrors) {
  std::ofstream(path("job.cfg")) << "world_size=4\ndp=4\nlayers=2\nsteps=4\n"
                                 << "anomaly kind=underclock target_rank=1 magnitude=0.8\n";
  auto r = run("simulate --config " + path("job.cfg") + " --out " + path(""));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(path("job.xtrace")));

  std::ofstream(path("bad.cfg")) << "world_size=4\ndp=3\n";
  r = run("simulate --config " + path("bad.cfg") + " --out " + path(""));
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("error: config:", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);

  r = run("simulate no_such_scenario --out " + path(""));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("healthy"), std::string::npos);
  EXPECT_EQ(run("simulate --config " + path("missing.cfg")).code, 3);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("").code, 2);
}

TEST_F(Cli, BaselineRecordAndOverwrite) {
  std::ofstream(path("short.cfg")) << "world_size=2\ndp=2\nlayers=1\nsteps=2\n";
  ASSERT_EQ(run("simulate --config " + path("short.cfg") + " --out " + path("")).code, 0);
  auto r = run("baseline " + path("short.xtrace") + " --store " + path("store"));
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("error: baseline:", 0), 0u) << r.err;

  ASSERT_EQ(run("simulate healthy --out " + path("")).code, 0);
  r = run("baseline " + path("healthy.xtrace") + " --store " + path("store"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("saved ", 0), 0u);
  r = run("baseline " + path("healthy.xtrace") + " --store " + path("store"));
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("overwrote ", 0), 0u);
  bool noted = false;
  for (const auto& e : fs::directory_iterator(path("store"))) {
    if (e.path().extension() == ".manifest") noted |= slurp(e.path()).find("overwrote") != std::string::npos;
  }
  EXPECT_TRUE(noted);
}

TEST_F(Cli, DiagnoseExitCodes) {
  ASSERT_EQ(run("simulate healthy --out " + path("")).code, 0);
  ASSERT_EQ(run("simulate healthy --seed 9 --out " + path("base")).code, 0);
  ASSERT_EQ(run("baseline " + path("base/healthy.xtrace") + " --store " + path("store")).code, 0);
  auto r = run("diagnose " + path("healthy.xtrace") + " --baseline-store " + path("store"));
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_EQ(r.out, "no anomalies\n");
  EXPECT_TRUE(fs::exists(path("healthy.report")));
  EXPECT_TRUE(fs::exists(path("healthy.report.manifest")));

  ASSERT_EQ(run("simulate unhealthy_gc --out " + path("")).code, 0);
  r = run("diagnose " + path("unhealthy_gc.xtrace") + " --baseline-store " + path("store"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("kernel_issue_stall"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("infrastructure+algorithm"), std::string::npos) << r.out;

  r = run("diagnose " + path("unhealthy_gc.xtrace"));
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("degraded"), std::string::npos) << r.out;
}

TEST_F(Cli, DiagnoseRejectsBadInput) {
  std::ofstream(path("junk.xtrace")) << "kind=py_api rank=0 step=zero\n";
  auto r = run("diagnose " + path("junk.xtrace"));
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("error: input:", 0), 0u) << r.err;
  EXPECT_EQ(run("diagnose " + path("absent.xtrace")).code, 3);
  std::ofstream(path("t.cfg")) << "ks_threshold=7\n";
  ASSERT_EQ(run("simulate healthy --out " + path("")).code, 0);
  EXPECT_EQ(run("diagnose " + path("healthy.xtrace") + " --thresholds " + path("t.cfg")).code, 2);
}

TEST_F(Cli, DiagnoseNeverReadsTruth) {
  ASSERT_EQ(run("simulate crash_rank_3 --out " + path("")).code, 0);
  const auto first = run("diagnose " + path("crash_rank_3.xtrace"));
  EXPECT_EQ(first.code, 1);
  const auto report = slurp(path("crash_rank_3.report"));
  std::ofstream(path("crash_rank_3.truth")) << "kind=underclock target_rank=7 magnitude=0.5\n";
  const auto second = run("diagnose " + path("crash_rank_3.xtrace"));
  EXPECT_EQ(second.out, first.out);
  EXPECT_EQ(slurp(path("crash_rank_3.report")), report);
  fs::remove(path("crash_rank_3.truth"));
  EXPECT_EQ(run("diagnose " + path("crash_rank_3.xtrace")).out, first.out);
  const auto refused = run("diagnose " + path("crash_rank_3.truth"));
  EXPECT_EQ(refused.code, 2);
}

TEST_F(Cli, ReportCommand) {
  std::ofstream(path("empty.report")) << "";
  auto r = run("report " + path("empty.report"));
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "no anomalies\n");
  EXPECT_EQ(run("report " + path("empty.report") + " --format xml").code, 2);

  ASSERT_EQ(run("simulate hang_noncomm_rank_5 --out " + path("")).code, 0);
  ASSERT_EQ(run("diagnose " + path("hang_noncomm_rank_5.xtrace")).code, 1);
  r = run("report " + path("hang_noncomm_rank_5.report") + " --format lines");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("anomaly=hang_noncomm"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("ranks=5 "), std::string::npos) << r.out;
  EXPECT_EQ(r.out, slurp(path("hang_noncomm_rank_5.report")));
}

}  // namespace
