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

// Acceptance suite. Each test is one criterion; a listener prints a single
// PASS/FAIL line per criterion after the normal gtest output.

#include <chrono>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "tilelink/dispatch.hpp"
#include "tilelink/kernels/checksum.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace tilelink {
namespace {

using namespace std::chrono_literals;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

constexpr KernelKind kKinds[] = {KernelKind::ag_gemm, KernelKind::gemm_rs, KernelKind::ag_moe, KernelKind::moe,
                                 KernelKind::ag_kv_attention};

// 1. Static mappings against a per-row enumeration over the full grid.
TEST(Acceptance, C1_MappingOracle) {
  const auto t0 = Clock::now();
  int checked = 0;
  for (std::size_t M : {64u, 512u, 8192u})
    for (int R : {1, 2, 4, 8})
      for (int C : {1, 2, 4})
        for (std::size_t Tm : {16u, 128u}) {
          std::optional<StaticMapping> m;
          try {
            m.emplace(M, R, C, Tm);
            m->require_block_aligned();
          } catch (const ConfigError&) {
            continue;
          }
          // Row-by-row oracle: counters, no division.
          std::size_t per_rank = 0, per_channel = 0;
          while (per_rank * static_cast<std::size_t>(R) < M) ++per_rank;
          while (per_channel * static_cast<std::size_t>(R * C) < M) ++per_channel;
          std::vector<std::size_t> tile_of(M), rank_of(M), chan_of(M);
          std::size_t t = 0, r = 0, c = 0, it = 0, ir = 0, ic = 0;
          for (std::size_t row = 0; row < M; ++row, ++it, ++ir, ++ic) {
            if (it == Tm) ++t, it = 0;
            if (ir == per_rank) ++r, ir = 0;
            if (ic == per_channel) ++c, ic = 0;
            tile_of[row] = t, rank_of[row] = r, chan_of[row] = c;
          }
          ASSERT_EQ(m->num_tiles(), t + 1);
          std::vector<int> hits(M, 0);
          for (std::size_t tile = 0; tile < m->num_tiles(); ++tile) {
            const ShapeRange s = static_shape_range(TileId{tile}, *m);
            ASSERT_LT(s.lo, s.hi);
            for (std::size_t row = s.lo; row < s.hi; ++row) {
              ++hits[row];
              ASSERT_EQ(tile_of[row], tile);
              ASSERT_EQ(rank_of[row], static_cast<std::size_t>(static_src_rank(TileId{tile}, *m)));
              ASSERT_EQ(chan_of[row], static_channel(TileId{tile}, *m).get());
            }
          }
          for (int h : hits) ASSERT_EQ(h, 1);
          ++checked;
        }
  EXPECT_GT(checked, 40);
  EXPECT_LT(seconds_since(t0), 10.0);
}

// 2. Every kernel against its sequential reference and an independent
// oracle across the design space.
TEST(Acceptance, C2_KernelOracle) {
  const auto t0 = Clock::now();
  int points = 0;
  for (KernelKind kind : kKinds)
    for (int R : {1, 2, 4, 8})
      for (auto order : {TileOrder::ring, TileOrder::all2all})
        for (auto mode : {TransferMode::pull, TransferMode::push})
          for (auto binding : {ResourceBinding::core, ResourceBinding::copy_engine, ResourceBinding::hybrid})
            for (bool integer : {true, false}) {
              KernelConfig c = test::small_config(kind, R, 1000 + points);
              ASSERT_NE(c.tm_comm, c.tm_comp);
              c.order = order, c.mode = mode, c.binding = binding;
              const Problem p = make_problem(c, integer);
              WorldOptions o;
              o.race_check = true;
              World w(R, o);
              KernelRunner k(w, p);
              const auto got = k.run().out;
              const std::string where = std::string(to_string(kind)) + " R=" + std::to_string(R) + " " +
                                        std::string(to_string(order)) + " " + std::string(to_string(mode)) + " " +
                                        std::string(to_string(binding)) + (integer ? " integer" : " real");
              const Comparison ref = compare_outputs(got, run_reference(p), tolerance_for(p));
              ASSERT_TRUE(ref.ok) << where << ": " << ref.message;
              const Comparison orc = compare_outputs(got, test::oracle(p), integer ? tolerance_for(p) : std::max(tolerance_for(p), 1e-5));
              ASSERT_TRUE(orc.ok) << where << " vs oracle: " << orc.message;
              ASSERT_TRUE(w.race_violations().empty()) << where;
              ++points;
            }

  // Second grouped GEMM on its own, from given grouped activations.
  for (int R : {1, 2, 4, 8}) {
    Problem p = make_problem(test::small_config(KernelKind::moe, R, 7), false);
    World w(R, WorldOptions{});
    Moe<float> moe(w, p.cfg, p.routing);
    std::mt19937_64 rng(static_cast<std::uint64_t>(R));
    std::uniform_real_distribution<float> u(-1, 1);
    for (int r = 0; r < R; ++r) {
      p.moe.hidden.emplace_back(moe.mapping().num_rows() * moe.slice());
      for (float& v : p.moe.hidden.back()) v = u(rng);
    }
    // The reference takes activations in (token, slot) order.
    const auto inv = moe.inverse_permutation();
    std::vector<std::vector<float>> by_token(static_cast<std::size_t>(R));
    for (int r = 0; r < R; ++r)
      for (std::size_t g : inv) {
        const auto row = p.moe.hidden[r].begin() + static_cast<std::ptrdiff_t>(g * moe.slice());
        by_token[r].insert(by_token[r].end(), row, row + static_cast<std::ptrdiff_t>(moe.slice()));
      }
    const auto want = reference_moe_second_half(p.cfg, by_token, p.moe.w2, p.routing);
    const Comparison cmp = compare_outputs(moe.run_second_half(p.moe).out, want, 1e-5);
    ASSERT_TRUE(cmp.ok) << "moe second half R=" << R << ": " << cmp.message;
    ++points;
  }
  EXPECT_EQ(points, 5 * 4 * 2 * 2 * 3 * 2 + 4);
  EXPECT_LT(seconds_since(t0), 120.0);
}

// 3. Randomized-delay producer/consumer schedules with the race checker.
TEST(Acceptance, C3_MemoryConsistencyStress) {
  const auto t0 = Clock::now();
  std::size_t torn = 0, violations = 0, tiles = 0;
  constexpr int kSchedules = 10000;
  for (int s = 0; s < kSchedules; ++s) {
    ChecksumConfig c;
    c.world_size = 2 + s % 3;
    c.channels = 1 + (s / 3) % 2;
    c.tiles_per_channel = 1 + (s / 6) % 2;
    c.mode = (s / 12) % 2 ? TransferMode::pull : TransferMode::push;
    c.producers = 1 + (s / 24) % 2;
    c.consumers = 1 + (s / 48) % 2;
    WorldOptions o;
    o.channels_per_rank = c.channels;
    o.race_check = true;
    o.jitter_ns = 1500;
    o.seed = static_cast<std::uint64_t>(s) * 7919u + 1;
    World w(c.world_size, o);
    const ChecksumResult r = run_checksum(w, c, static_cast<std::uint64_t>(s));
    torn += r.torn_reads;
    violations += r.violations.size();
    tiles += r.tiles_checked;
    ASSERT_EQ(r.torn_reads + r.violations.size(), 0u) << "schedule " << s;
  }
  EXPECT_EQ(torn, 0u);
  EXPECT_EQ(violations, 0u);
  EXPECT_GT(tiles, static_cast<std::size_t>(kSchedules));
  EXPECT_LT(seconds_since(t0), 60.0);
}

// 4. A second run on the same world sees no signals of the first.
TEST(Acceptance, C4_EpochIsolation) {
  for (KernelKind kind : kKinds)
    for (int R : {1, 2, 4, 8})
      for (auto binding : {ResourceBinding::core, ResourceBinding::copy_engine}) {
        KernelConfig c = test::small_config(kind, R, 77);
        c.binding = binding;
        const Problem p = make_problem(c, true);
        WorldOptions o;
        o.race_check = true;
        World w(R, o);
        KernelRunner k(w, p);
        const auto first = k.run().out;
        const auto second = k.run().out;
        ASSERT_EQ(first, second) << to_string(kind) << " R=" << R;
        ASSERT_TRUE(compare_outputs(second, run_reference(p), tolerance_for(p)).ok) << to_string(kind) << " R=" << R;
      }

  // Counters left at the expected value by one epoch never satisfy the next.
  WorldOptions o;
  o.timeout = 100ms;
  World w(2, o);
  const ListMapping m{{{0, 1}}, {0}, {{ChannelId{0}}}};
  w.expect_arrivals(0, 0, ChannelId{0}, 1);
  w.run({.host = [&](UnitContext& ctx) {
    if (ctx.rank() == 1) ctx.producer_tile_notify(m, TileId{0}, NotifyMode::p2p);
  }});
  w.begin_epoch();
  w.expect_arrivals(0, 0, ChannelId{0}, 1);
  EXPECT_THROW(w.run({.host = [&](UnitContext& ctx) {
                 if (ctx.rank() == 0) ctx.consumer_tile_wait(m, TileId{0});
               }}),
               DeadlockError);
}

// 5. The dropped-notify hook always ends in exit code 2 naming the channel.
TEST(Acceptance, C5_DeadlockDiagnostics) {
  test::TempDir dir;
  constexpr int kTimeoutMs = 300;
  int runs = 0;
  for (KernelKind kind : kKinds)
    for (int R : {2, 4})
      for (auto binding : {ResourceBinding::core, ResourceBinding::copy_engine, ResourceBinding::hybrid}) {
        RunConfig rc;
        rc.kernel = test::small_config(kind, R, 5);
        rc.kernel.binding = binding;
        rc.orders = {rc.kernel.order};
        rc.bindings = {binding};
        rc.modes = {rc.kernel.mode};
        rc.tm_comms = {rc.kernel.tm_comm};
        rc.tm_comps = {rc.kernel.tm_comp};
        rc.tn_comps = {rc.kernel.tn_comp};
        rc.tk_comps = {rc.kernel.tk_comp};
        const std::string path = dir.write("c" + std::to_string(runs++) + ".json", to_json(rc).dump());
        const auto t0 = Clock::now();
        const auto r = test::run_cli(TILELINK_SIM_BIN, "verify --sabotage-drop-notify --timeout-ms " +
                                                           std::to_string(kTimeoutMs) + " --config " + path);
        const double elapsed = seconds_since(t0);
        const std::string where = std::string(to_string(kind)) + " R=" + std::to_string(R) + " " +
                                  std::string(to_string(binding));
        EXPECT_EQ(r.code, 2) << where << "\n" << r.out << r.err;
        EXPECT_NE(r.err.find("deadlock"), std::string::npos) << where << "\n" << r.err;
        EXPECT_NE(r.err.find("channel"), std::string::npos) << where << "\n" << r.err;
        EXPECT_LT(elapsed, kTimeoutMs / 1000.0 + 5.0) << where;
      }
}

// 6. Injected latency on a 4-rank ag_gemm is partly hidden by computation.
TEST(Acceptance, C6_OverlapDemonstrated) {
  KernelConfig c;
  c.kind = KernelKind::ag_gemm;
  c.world_size = 4;
  // Compute per tile must be comparable to the injected latency, or the
  // ratio is capped at comp_only / comm_only.
  c.m = 512, c.n = 256, c.k = 128;
  c.tm_comm = 8, c.tm_comp = 8, c.tn_comp = 256, c.tk_comp = 128;
  c.binding = ResourceBinding::copy_engine;
  const StaticMapping map(c.m, c.world_size, c.channels, c.tm_comm);
  ASSERT_GE(map.tiles_of_rank(0).size(), 8u);
  const Problem p = make_problem(c, true);
  WorldOptions o;
  o.comm_delay = 200us;
  World w(4, o);
  const OverlapReport r = measure_kernel(w, p, 5);
  std::printf("  comp_only %.4f s, comm_only %.4f s, overlap %.4f s, ratio %.3f\n", r.comp_only_s, r.comm_only_s,
              r.overlap_s, r.ratio);
  EXPECT_LT(r.overlap_s, r.comp_only_s + r.comm_only_s - 0.25 * r.comm_only_s);
  EXPECT_GT(r.ratio, 0.25);
}

// 7. The overlap ratio formula on its fixtures, to machine precision.
TEST(Acceptance, C7_OverlapRatioFormula) {
  EXPECT_EQ(overlap_ratio(5, 4, 6), 0.75);
  EXPECT_EQ(overlap_ratio(5, 4, 9), 0.0);
  EXPECT_EQ(overlap_ratio(5, 4, 5), 1.0);
  EXPECT_EQ(overlap_ratio(5, 4, 6), (5.0 + 4.0 - 6.0) / 4.0);
}

class CriterionReporter : public ::testing::EmptyTestEventListener {
 public:
  void OnTestEnd(const ::testing::TestInfo& info) override {
    results_.push_back({info.name(), info.result()->Passed(), info.result()->elapsed_time()});
  }
  void OnTestProgramEnd(const ::testing::UnitTest&) override {
    static const std::map<std::string, std::string> names = {
        {"C1_MappingOracle", "mapping oracle suite"},
        {"C2_KernelOracle", "kernel oracle suite"},
        {"C3_MemoryConsistencyStress", "memory-consistency stress"},
        {"C4_EpochIsolation", "epoch isolation"},
        {"C5_DeadlockDiagnostics", "deadlock diagnostics"},
        {"C6_OverlapDemonstrated", "overlap demonstrated"},
        {"C7_OverlapRatioFormula", "overlap ratio formula"}};
    std::printf("\nacceptance summary\n");
    for (const auto& r : results_) {
      const auto it = names.find(r.name);
      std::printf("criterion %c %-28s %s (%.2f s)\n", r.name[1], it == names.end() ? r.name.c_str() : it->second.c_str(),
                  r.passed ? "PASS" : "FAIL", r.ms / 1000.0);
    }
    std::fflush(stdout);
  }

 private:
  struct Result {
    std::string name;
    bool passed;
    long long ms;
  };
  std::vector<Result> results_;
};

}  // namespace
}  // namespace tilelink

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  ::testing::UnitTest::GetInstance()->listeners().Append(new tilelink::CriterionReporter);
  return RUN_ALL_TESTS();
}
