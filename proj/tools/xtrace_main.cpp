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
// xtrace command-line tool: simulate, baseline, diagnose, report.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "xtrace/baseline.hpp"
#include "xtrace/codec.hpp"
#include "xtrace/diagnostics.hpp"
#include "xtrace/manifest.hpp"
#include "xtrace/report.hpp"
#include "xtrace/sim.hpp"
#include "xtrace/validate.hpp"

namespace fs = std::filesystem;
using namespace xtrace;

namespace {

enum Exit { kClean = 0, kAnomalies = 1, kUsage = 2, kIo = 3 };

struct UsageError : TraceError {
  using TraceError::TraceError;
};

std::string one_line(std::string s) {
  for (auto& ch : s) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  return s;
}

int fail(std::string_view kind, const std::string& msg, int code) {
  std::cerr << "error: " << kind << ": " << one_line(msg) << "\n";
  return code;
}

std::string join_args(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

struct Loaded {
  TraceFile file;
  std::vector<StepTimeline> timelines;
};

Loaded load_trace(const fs::path& path) {
  if (path.extension() == ".truth") {
    throw UsageError("refusing to read ground-truth sidecar " + path.string());
  }
  Loaded l;
  l.file = decode_trace_file(read_file(path));
  l.timelines = group_timelines(l.file.records);
  const auto v = validate_trace(l.timelines);
  if (!v.ok) throw TraceError("invalid trace: rule " + v.rule + ": " + v.message);
  return l;
}

BaselineKey key_from(const Loaded& l, const std::string& override_key) {
  if (!override_key.empty()) {
    auto parts = split(override_key, ':');
    auto world = parts.size() == 3 ? parse_int(parts[1]) : std::nullopt;
    if (!world) throw UsageError("--key must look like backbone:world_size:model");
    return {std::string(parts[0]), static_cast<int>(*world), std::string(parts[2])};
  }
  if (!l.file.job) throw UsageError("trace has no job header; pass --key");
  return {l.file.job->backbone, l.file.job->world_size, l.file.job->model};
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

int cmd_simulate(const std::string& name, const std::string& config_path, const fs::path& out_dir,
                 std::optional<std::uint64_t> seed, const std::string& cmdline) {
  Timer timer;
  JobConfig config;
  std::vector<AnomalySpec> anomalies;
  std::string stem;
  std::vector<std::string> inputs;
  if (!config_path.empty()) {
    if (!name.empty()) throw UsageError("give either a scenario name or --config, not both");
    auto cf = parse_config(read_file(config_path));
    config = cf.config;
    anomalies = cf.anomalies;
    if (seed) config.seed = *seed;
    stem = fs::path(config_path).stem().string();
    inputs.push_back(config_path);
  } else {
    if (name.empty()) throw UsageError("missing scenario name (or --config)");
    auto s = scenario(name, seed.value_or(1));
    config = s.config;
    anomalies = s.anomalies;
    stem = name;
  }
  validate(config);
  validate(anomalies, config);

  const auto out = simulate(config, anomalies);
  const auto trace_text = encode_trace_file(to_trace_file(out));
  const auto truth_text = encode_truth(out.ground_truth);

  ensure_dir(out_dir);
  const auto trace_path = out_dir / (stem + ".xtrace");
  const auto truth_path = out_dir / (stem + ".truth");
  write_file_atomic(trace_path, trace_text);
  write_file_atomic(truth_path, truth_text);

  RunManifest m;
  m.command_line = cmdline;
  m.config_hash = hex64(fnv1a64(truth_text, fnv1a64(encode_config(config))));
  m.seed = config.seed;
  m.inputs = inputs;
  m.outputs = {trace_path.string(), truth_path.string()};
  m.wall_seconds = timer.seconds();
  write_file_atomic(out_dir / (stem + ".manifest"), encode_manifest(m));
  std::cout << "wrote " << trace_path.string() << " (" << out.timelines.size() << " rank-steps"
            << (out.halted ? ", halted" : "") << ")\n";
  return kClean;
}

int cmd_baseline(const fs::path& trace, const std::string& key_arg, const fs::path& store_dir,
                 const std::string& cmdline) {
  Timer timer;
  const auto l = load_trace(trace);
  const auto key = key_from(l, key_arg);
  const auto profile = baseline_record(l.timelines, key);
  BaselineStore store(store_dir);
  const bool overwrote = store.save(profile);
  const auto path = store.path_for(key);

  RunManifest m;
  m.command_line = cmdline;
  m.config_hash = hex64(fnv1a64(encode_baseline(profile)));
  m.inputs = {trace.string()};
  m.outputs = {path.string()};
  if (overwrote) m.notes.push_back("overwrote existing profile for this key");
  m.wall_seconds = timer.seconds();
  write_file_atomic(path.string() + ".manifest", encode_manifest(m));
  std::cout << (overwrote ? "overwrote " : "saved ") << path.string() << "\n";
  return kClean;
}

int cmd_diagnose(const fs::path& trace, const std::string& store_dir, const std::string& thresholds_path,
                 std::string out_path, const std::string& cmdline) {
  Timer timer;
  const auto l = load_trace(trace);
  DiagnoseInput in;
  in.timelines = l.timelines;
  in.stacks = l.file.stacks;
  in.hung = l.file.hung;
  std::vector<std::string> inputs = {trace.string()};
  if (!thresholds_path.empty()) {
    in.thresholds = parse_thresholds(read_file(thresholds_path));
    inputs.push_back(thresholds_path);
  }
  if (!store_dir.empty() && l.file.job) {
    BaselineStore store(store_dir);
    const BaselineKey key{l.file.job->backbone, l.file.job->world_size, l.file.job->model};
    in.baseline = store.lookup(key);
    if (in.baseline) inputs.push_back(store.path_for(key).string());
  }
  const auto res = diagnose(in);
  if (out_path.empty()) {
    auto p = trace;
    p.replace_extension(".report");
    out_path = p.string();
  }
  const auto text = encode_reports(res);
  write_file_atomic(out_path, text);

  RunManifest m;
  m.command_line = cmdline;
  m.config_hash = hex64(fnv1a64(text));
  m.inputs = inputs;
  m.outputs = {out_path};
  m.wall_seconds = timer.seconds();
  write_file_atomic(out_path + ".manifest", encode_manifest(m));
  std::cout << render_table(res);
  return has_actionable(res.reports) ? kAnomalies : kClean;
}

int cmd_report(const fs::path& path, const std::string& format) {
  const auto res = decode_reports(read_file(path));
  std::cout << (format == "lines" ? render_lines(res) : render_table(res));
  return kClean;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xtrace: trace simulation and training-job diagnostics"};
  app.require_subcommand(1);
  const auto cmdline = join_args(argc, argv);

  auto* sim = app.add_subcommand("simulate", "run a scenario or config through the simulator");
  std::string scenario_name, config_path, out_dir = ".";
  std::optional<std::uint64_t> seed;
  sim->add_option("scenario", scenario_name, "catalog scenario name");
  sim->add_option("--config", config_path, "config file (key=value, plus 'anomaly ...' lines)");
  sim->add_option("--out", out_dir, "output directory");
  sim->add_option("--seed", seed, "random seed");

  auto* base = app.add_subcommand("baseline", "record a baseline profile from a healthy trace");
  std::string base_trace, key_arg, store_dir;
  base->add_option("trace", base_trace, "trace file")->required();
  base->add_option("--key", key_arg, "backbone:world_size:model (default: trace job header)");
  base->add_option("--store", store_dir, "baseline store directory")->required();

  auto* diag = app.add_subcommand("diagnose", "diagnose a trace");
  std::string diag_trace, diag_store, thresholds_path, report_out;
  diag->add_option("trace", diag_trace, "trace file")->required();
  diag->add_option("--baseline-store", diag_store, "baseline store directory");
  diag->add_option("--thresholds", thresholds_path, "thresholds file (key=value)");
  diag->add_option("--out", report_out, "report file (default: <trace>.report)");

  auto* rep = app.add_subcommand("report", "render a report file");
  std::string report_path, format = "table";
  rep->add_option("report", report_path, "report file")->required();
  rep->add_option("--format", format, "table or lines")->check(CLI::IsMember({"table", "lines"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("usage", e.what(), kUsage);
  }

  try {
    if (*sim) return cmd_simulate(scenario_name, config_path, out_dir, seed, cmdline);
    if (*base) return cmd_baseline(base_trace, key_arg, store_dir, cmdline);
    if (*diag) return cmd_diagnose(diag_trace, diag_store, thresholds_path, report_out, cmdline);
    if (*rep) return cmd_report(report_path, format);
  } catch (const IoError& e) {
    return fail("io", e.what(), kIo);
  } catch (const fs::filesystem_error& e) {
    return fail("io", e.what(), kIo);
  } catch (const UsageError& e) {
    return fail("usage", e.what(), kUsage);
  } catch (const SimError& e) {
    return fail("config", e.what(), kUsage);
  } catch (const BaselineError& e) {
    return fail("baseline", e.what(), kUsage);
  } catch (const TraceError& e) {
    return fail("input", e.what(), kUsage);
  }
  return kUsage;
}
