// Copyright 2026 The tilelink-sim Authors. All rights reserved.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// tilelink-sim: verify, benchmark, trace and sweep the overlapped kernels.
//
// Exit codes: 0 ok, 1 numerical mismatch or failed check, 2 deadlock or
// timeout, 3 usage or configuration error.

#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "tilelink/tilelink.hpp"

namespace {

using namespace tilelink;
using nlohmann::json;

enum Exit { kOk = 0, kMismatch = 1, kDeadlock = 2, kUsage = 3 };

struct Overrides {
  std::string config;
  std::optional<int> repeat;
  std::optional<std::string> trace;
  std::optional<std::string> report;
  bool race_check = false;
  std::optional<std::int64_t> comm_delay_us;
  std::optional<std::int64_t> timeout_ms;
  bool sabotage = false;
};

RunConfig load(const Overrides& o) {
  RunConfig rc = load_run_config(o.config);
  if (o.repeat) rc.repeat = *o.repeat;
  if (o.trace) rc.trace = *o.trace;
  if (o.report) rc.report = *o.report;
  if (o.race_check) rc.race_check = true;
  if (o.comm_delay_us) rc.comm_delay_us = *o.comm_delay_us;
  if (o.timeout_ms) rc.timeout_ms = *o.timeout_ms;
  if (o.sabotage) rc.sabotage_drop_notify = true;
  rc.validate();
  return rc;
}

void require_single_point(const RunConfig& rc, const char* cmd) {
  if (rc.is_sweep()) throw ConfigError(std::string(cmd) + " takes a single configuration; use sweep for lists");
}

// Writes to `path`, or stdout when absent.
void emit(const std::optional<std::string>& path, const json& j) {
  if (!path) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream out(*path);
  if (!out) throw ConfigError("cannot write '" + *path + "'");
  out << j.dump(2) << "\n";
}

struct VerifyResult {
  Comparison cmp;
  std::vector<std::string> violations;
  bool ok() const { return cmp.ok && violations.empty(); }
};

VerifyResult verify_point(const RunConfig& rc) {
  const Problem p = make_problem(rc.kernel, rc.integer_inputs);
  World w(rc.kernel.world_size, world_options(rc));
  KernelRunner runner(w, p);
  VerifyResult v;
  try {
    const KernelRun<float> got = runner.run(ExecMode::full);
    v.cmp = compare_outputs(got.out, run_reference(p), tolerance_for(p));
  } catch (const RaceViolation& e) {
    v.cmp.ok = false;
    v.cmp.message = e.what();
  }
  v.violations = w.race_violations();
  return v;
}

void print_verify(const VerifyResult& v) {
  if (v.ok()) {
    std::cout << "verify: ok (max relative error " << v.cmp.max_rel_error << ", tolerance " << v.cmp.tolerance
              << ")\n";
    return;
  }
  if (!v.cmp.ok) std::cout << "verify: " << v.cmp.message << "\n";
  for (const auto& s : v.violations) std::cout << "race: " << s << "\n";
}

int cmd_verify(const Overrides& o) {
  const RunConfig rc = load(o);
  require_single_point(rc, "verify");
  const VerifyResult v = verify_point(rc);
  print_verify(v);
  return v.ok() ? kOk : kMismatch;
}

OverlapReport bench_point(const RunConfig& rc) {
  const Problem p = make_problem(rc.kernel, rc.integer_inputs);
  World w(rc.kernel.world_size, world_options(rc));
  OverlapReport r = measure_kernel(w, p, rc.repeat);
  r.config = to_json(rc);
  return r;
}

int cmd_bench(const Overrides& o) {
  const RunConfig rc = load(o);
  require_single_point(rc, "bench");
  const OverlapReport r = bench_point(rc);
  emit(rc.report, to_json(r));
  if (!within_overlap_budget(r)) {
    std::cerr << "bench: overlapped time " << r.overlap_s << " s exceeds the comp_only + comm_only budget\n";
    return kMismatch;
  }
  return kOk;
}

int cmd_trace(const Overrides& o) {
  RunConfig rc = load(o);
  require_single_point(rc, "trace");
  if (!rc.trace) throw ConfigError("trace needs an output path (--trace or config 'trace')");
  std::ofstream out(*rc.trace);
  if (!out) throw ConfigError("cannot write trace '" + *rc.trace + "'");

  const Problem p = make_problem(rc.kernel, rc.integer_inputs);
  WorldOptions opts = world_options(rc);
  opts.trace = true;
  World w(rc.kernel.world_size, opts);
  KernelRunner runner(w, p);
  const KernelRun<float> got = runner.run(ExecMode::full);
  const std::vector<TraceEvent> events = w.tracer().collect();
  write_jsonl(out, events);
  out.close();

  const BoardLayout layout = w.layout();
  const TraceSummary summary = analyze_trace(events, layout, runner.notify_check(layout));
  const Comparison cmp = compare_outputs(got.out, run_reference(p), tolerance_for(p));
  json j = to_json(summary);
  j["events"] = events.size();
  j["peer_waits"] = summary.total(&UnitSummary::peer_waits);
  j["verified"] = cmp.ok;
  std::cout << j.dump(2) << "\n";
  if (!cmp.ok) std::cout << "verify: " << cmp.message << "\n";
  return summary.ok() && cmp.ok ? kOk : kMismatch;
}

int cmd_sweep(const Overrides& o) {
  const RunConfig rc = load(o);
  json points = json::array();
  int failures = 0;
  bool deadlock = false;
  for (const RunConfig& point : rc.expand()) {
    json entry = {{"config", to_json(point)}};
    try {
      const VerifyResult v = verify_point(point);
      entry["verified"] = v.ok();
      entry["max_rel_error"] = v.cmp.max_rel_error;
      if (v.ok()) {
        const OverlapReport r = bench_point(point);
        entry["report"] = to_json(r);
        if (!within_overlap_budget(r)) {
          entry["error"] = "overlapped time exceeds the serial budget";
          ++failures;
        }
      } else {
        entry["error"] = v.cmp.ok ? "race checker violations" : v.cmp.message;
        ++failures;
      }
    } catch (const DeadlockError& e) {
      entry["verified"] = false;
      entry["error"] = e.what();
      deadlock = true;
      ++failures;
    }
    points.push_back(entry);
  }
  emit(rc.report, points);
  if (failures > 0) {
    std::cerr << "sweep: " << failures << " of " << points.size() << " points failed\n";
    for (const auto& e : points) {
      if (e.contains("error")) std::cerr << "  " << e["config"].dump() << ": " << e["error"].get<std::string>() << "\n";
    }
  }
  if (deadlock) return kDeadlock;
  return failures > 0 ? kMismatch : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tile-level compute/communication overlap simulator"};
  app.require_subcommand(1);
  Overrides o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration")->required();
    sub->add_option("--repeat", o.repeat, "timed repeats per measurement");
    sub->add_option("--trace", o.trace, "JSON Lines trace output");
    sub->add_option("--report", o.report, "JSON report output (default stdout)");
    sub->add_flag("--race-check", o.race_check, "enable the race checker");
    sub->add_option("--inject-comm-delay-us", o.comm_delay_us, "latency added to every tile transfer");
    sub->add_option("--timeout-ms", o.timeout_ms, "deadlock timeout");
    sub->add_flag("--sabotage-drop-notify", o.sabotage, "test hook: drop the first producer notify");
  };
  CLI::App* verify = app.add_subcommand("verify", "run the kernel and compare against the reference");
  CLI::App* bench = app.add_subcommand("bench", "measure comp-only, comm-only and overlapped time");
  CLI::App* trace = app.add_subcommand("trace", "run with tracing and write a JSON Lines trace");
  CLI::App* sweep = app.add_subcommand("sweep", "verify and bench the Cartesian product of list fields");
  for (CLI::App* sub : {verify, bench, trace, sweep}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (verify->parsed()) return cmd_verify(o);
    if (bench->parsed()) return cmd_bench(o);
    if (trace->parsed()) return cmd_trace(o);
    return cmd_sweep(o);
  } catch (const DeadlockError& e) {
    std::cerr << e.what() << "\n";
    return kDeadlock;
  } catch (const RaceViolation& e) {
    std::cerr << "race: " << e.what() << "\n";
    return kMismatch;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
}
