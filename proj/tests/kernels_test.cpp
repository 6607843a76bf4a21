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

#include <chrono>
#include <vector>

#include <gtest/gtest.h>

#include "tilelink/dispatch.hpp"
#include "tilelink/kernels/checksum.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace tilelink {
namespace {

using namespace std::chrono_literals;
using test::small_config;

WorldOptions world_for(const KernelConfig& c, bool race = true) {
  WorldOptions o;
  o.channels_per_rank = c.channels;
  o.timeout = 10000ms;
  o.race_check = race;
  return o;
}

std::string check(const test::Out& got, const test::Out& want, double tol) {
  const Comparison c = compare_outputs(got, want, tol);
  return c.ok ? "" : c.message;
}

// ---- schedules -----------------------------------------------------------

TEST(TileSchedule, Examples) {
  EXPECT_EQ(tile_schedule(TileOrder::ring, 1, 4), (std::vector<RankId>{1, 0, 3, 2}));
  EXPECT_EQ(tile_schedule(TileOrder::all2all, 2, 4), (std::vector<RankId>{2, 0, 1, 3}));
  EXPECT_EQ(tile_schedule(TileOrder::ring, 0, 1), (std::vector<RankId>{0}));
  EXPECT_EQ(tile_schedule(TileOrder::all2all, 0, 1), (std::vector<RankId>{0}));
  EXPECT_THROW(tile_schedule(TileOrder::ring, 4, 4), DomainError);
}

TEST(TileSchedule, AlwaysAPermutationStartingAtSelf) {
  for (int R = 1; R <= 9; ++R)
    for (RankId r = 0; r < R; ++r)
      for (auto order : {TileOrder::ring, TileOrder::all2all}) {
        auto s = tile_schedule(order, r, R);
        ASSERT_EQ(s.front(), r);
        std::sort(s.begin(), s.end());
        for (int i = 0; i < R; ++i) ASSERT_EQ(s[i], i);
      }
}

TEST(Binding, HybridAlternatesByTileParity) {
  EXPECT_FALSE(via_copy_engine(ResourceBinding::core, TileId{0}));
  EXPECT_TRUE(via_copy_engine(ResourceBinding::copy_engine, TileId{1}));
  EXPECT_TRUE(via_copy_engine(ResourceBinding::hybrid, TileId{2}));
  EXPECT_FALSE(via_copy_engine(ResourceBinding::hybrid, TileId{3}));
}

// ---- configuration -----------------------------------------------------

TEST(KernelConfigValidate, RejectsBadShapes) {
  auto c = small_config(KernelKind::ag_gemm, 2);
  c.tm_comm = 64;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config(KernelKind::ag_kv_attention, 2);
  c.seq = 33;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config(KernelKind::moe, 2);
  c.topk = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config(KernelKind::moe, 2);
  c.intermediate = 7;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config(KernelKind::gemm_rs, 2);
  c.comm_workers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(KernelConfigValidate, WorldMustMatch) {
  World w(2, WorldOptions{});
  EXPECT_THROW(AgGemm<float>(w, small_config(KernelKind::ag_gemm, 4)), ConfigError);
  EXPECT_THROW(AgGemm<float>(w, small_config(KernelKind::gemm_rs, 2)), ConfigError);
}

TEST(KernelInputs, WrongSizesAreDomainErrors) {
  const auto c = small_config(KernelKind::ag_gemm, 2);
  World w(2, world_for(c));
  AgGemm<float> k(w, c);
  GemmInputs<float> in{{std::vector<float>(3), std::vector<float>(3)}, {std::vector<float>(96), std::vector<float>(96)}};
  EXPECT_THROW(k.run(in), DomainError);
}

// ---- ag_gemm -----------------------------------------------------------

KernelConfig gemm_config(KernelKind kind, int R, std::size_t M, std::size_t N, std::size_t K) {
  KernelConfig c;
  c.kind = kind;
  c.world_size = R;
  c.m = M, c.n = N, c.k = K;
  c.tm_comm = M / static_cast<std::size_t>(R) / 2 ? M / static_cast<std::size_t>(R) / 2 : 1;
  c.tm_comp = 3, c.tn_comp = 3, c.tk_comp = 2;
  return c;
}

TEST(AgGemm, SingleRankEqualsLocalProductExactly) {
  const Problem p = make_problem(gemm_config(KernelKind::ag_gemm, 1, 8, 4, 4), true);
  World w(1, world_for(p.cfg));
  KernelRunner k(w, p);
  EXPECT_EQ(k.run().out, test::oracle(p));
}

TEST(AgGemm, TwoRanksIntegerInputsMatchBitExactly) {
  const Problem p = make_problem(gemm_config(KernelKind::ag_gemm, 2, 8, 4, 4), true);
  World w(2, world_for(p.cfg));
  KernelRunner k(w, p);
  const auto out = k.run().out;
  EXPECT_EQ(out, test::oracle(p));
  EXPECT_EQ(out, run_reference(p));
}

TEST(AgGemm, EightRanksDeskScaleWithinTolerance) {
  KernelConfig c;
  c.kind = KernelKind::ag_gemm;
  c.world_size = 8;
  c.channels = 2;
  c.m = 512, c.k = 128, c.n = 172;
  c.tm_comm = 16, c.tm_comp = 32, c.tn_comp = 64, c.tk_comp = 32;
  c.binding = ResourceBinding::hybrid;
  const Problem p = make_problem(c, false);
  World w(8, world_for(c, false));
  KernelRunner k(w, p);
  EXPECT_EQ(check(k.run().out, test::oracle(p), 1e-5), "");
}

TEST(AgGemm, ComputeOnlyUsesPreGatheredInputs) {
  const Problem p = make_problem(small_config(KernelKind::ag_gemm, 4), true);
  World w(4, world_for(p.cfg));
  KernelRunner k(w, p);
  EXPECT_EQ(k.run(ExecMode::compute_only).out, test::oracle(p));
}

TEST(AgGemm, CommOnlyMovesDataWithoutArithmetic) {
  const Problem p = make_problem(small_config(KernelKind::ag_gemm, 4), true);
  World w(4, world_for(p.cfg));
  KernelRunner k(w, p);
  const auto out = k.run(ExecMode::comm_only).out;
  for (const auto& rank : out) {
    for (float v : rank) ASSERT_EQ(v, 0.0f);
  }
}

// ---- gemm + reduce-scatter ---------------------------------------------

TEST(GemmRs, SingleRankEqualsLocalProduct) {
  const Problem p = make_problem(gemm_config(KernelKind::gemm_rs, 1, 8, 4, 4), true);
  World w(1, world_for(p.cfg));
  KernelRunner k(w, p);
  EXPECT_EQ(k.run().out, test::oracle(p));
}

TEST(GemmRs, TwoRanksMatchDenseOracle) {
  const Problem p = make_problem(gemm_config(KernelKind::gemm_rs, 2, 8, 4, 4), false);
  World w(2, world_for(p.cfg));
  KernelRunner k(w, p);
  EXPECT_EQ(check(k.run().out, test::oracle(p), 1e-6), "");
}

TEST(GemmRs, AllOnesGiveKTimesR) {
  for (int R : {1, 2, 4, 8}) {
    for (auto order : {TileOrder::ring, TileOrder::all2all}) {
      auto c = gemm_config(KernelKind::gemm_rs, R, 32, 6, 5);
      c.order = order;
      GemmInputs<float> in;
      for (int r = 0; r < R; ++r) {
        in.a.emplace_back(c.m * c.k, 1.0f);
        in.b.emplace_back(c.k * c.n, 1.0f);
      }
      World w(R, world_for(c));
      GemmRs<float> k(w, c);
      const auto out = k.run(in).out;
      for (int r = 0; r < R; ++r) {
        ASSERT_EQ(out[r].size(), c.m / R * c.n);
        for (float v : out[r]) ASSERT_EQ(v, static_cast<float>(c.k * R)) << "R=" << R << " rank " << r;
      }
    }
  }
}

TEST(GemmRs, ComputeOnlyReturnsPartials) {
  const Problem p = make_problem(gemm_config(KernelKind::gemm_rs, 2, 8, 4, 4), true);
  World w(2, world_for(p.cfg));
  KernelRunner k(w, p);
  const auto partials = k.run(ExecMode::compute_only).out;
  for (int r = 0; r < 2; ++r) {
    KernelConfig one = p.cfg;
    one.world_size = 1;
    one.kind = KernelKind::ag_gemm;
    EXPECT_EQ(partials[r], test::oracle_ag_gemm(one, {{p.gemm.a[r]}, {p.gemm.b[r]}})[0]);
  }
}

// ---- MoE -----------------------------------------------------------------

KernelConfig moe_config(KernelKind kind, int R, std::size_t S, int E, int k) {
  KernelConfig c;
  c.kind = kind;
  c.world_size = R;
  c.tokens = S, c.hidden = 4, c.intermediate = 4;
  c.experts = E, c.topk = k;
  c.tm_comm = 1, c.tm_comp = 2, c.tn_comp = 2, c.tk_comp = 2;
  return c;
}

Problem with_routing(Problem p, std::vector<int> ids) {
  p.routing.topk_ids = std::move(ids);
  return p;
}

TEST(AgMoe, SingleExpertSingleRankIsPlainGemm) {
  const Problem p = make_problem(moe_config(KernelKind::ag_moe, 1, 4, 1, 1), true);
  World w(1, world_for(p.cfg));
  KernelRunner k(w, p);
  KernelConfig g = gemm_config(KernelKind::ag_gemm, 1, 4, 4, 4);
  EXPECT_EQ(k.run().out, test::oracle_ag_gemm(g, {{p.moe.x[0]}, {p.moe.w1[0]}}));
}

TEST(AgMoe, FourTokensTwoExpertsExact) {
  const Problem p = with_routing(make_problem(moe_config(KernelKind::ag_moe, 2, 4, 2, 1), true), {0, 1, 0, 1});
  World w(2, world_for(p.cfg));
  KernelRunner k(w, p);
  const auto out = k.run().out;
  EXPECT_EQ(out, test::oracle(p));
  EXPECT_EQ(out, run_reference(p));
}

TEST(AgMoe, TopTwoDoublesTheRows) {
  const Problem p = make_problem(moe_config(KernelKind::ag_moe, 2, 6, 2, 2), true);
  World w(2, world_for(p.cfg));
  Moe<float> moe(w, p.cfg, p.routing);
  EXPECT_EQ(moe.mapping().num_rows(), 12u);
  const auto out = moe.run_first_half(p.moe).out;
  for (const auto& rank : out) EXPECT_EQ(rank.size(), 12u * moe.slice());
}

TEST(AgMoe, ExpertWithoutTokensIsSkipped) {
  const Problem p = with_routing(make_problem(moe_config(KernelKind::moe, 2, 4, 4, 1), true), {3, 0, 0, 3});
  World w(2, world_for(p.cfg));
  KernelRunner k(w, p);
  EXPECT_EQ(check(k.run().out, test::oracle(p), 1e-5), "");
}

TEST(MoeSecondHalf, TopOneCombineIsIdentity) {
  const Problem p = make_problem(moe_config(KernelKind::moe, 1, 4, 1, 1), true);
  World w(1, world_for(p.cfg));
  KernelRunner k(w, p);
  // Dense two-layer MLP without activation.
  KernelConfig g = gemm_config(KernelKind::ag_gemm, 1, 4, 4, 4);
  const auto h = test::oracle_ag_gemm(g, {{p.moe.x[0]}, {p.moe.w1[0]}})[0];
  EXPECT_EQ(k.run().out, test::oracle_ag_gemm(g, {{h}, {p.moe.w2[0]}}));
}

TEST(MoeSecondHalf, FromGroupedActivationsMatchesDenseOracle) {
  Problem p = with_routing(make_problem(moe_config(KernelKind::moe, 2, 4, 2, 1), false), {0, 1, 0, 1});
  World w(2, world_for(p.cfg));
  Moe<float> moe(w, p.cfg, p.routing);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(-1, 1);
  for (int r = 0; r < 2; ++r) {
    p.moe.hidden.emplace_back(moe.mapping().num_rows() * moe.slice());
    for (float& v : p.moe.hidden.back()) v = u(rng);
  }
  const auto inv = moe.inverse_permutation();
  const auto want = test::oracle_moe_second_half(p.cfg, p.moe, p.routing, [&](std::size_t s, int j, int r) {
    const std::size_t g = inv[s * static_cast<std::size_t>(p.cfg.topk) + static_cast<std::size_t>(j)];
    std::vector<double> h;
    for (std::size_t c = 0; c < moe.slice(); ++c) h.push_back(p.moe.hidden[r][g * moe.slice() + c]);
    return h;
  });
  EXPECT_EQ(check(moe.run_second_half(p.moe).out, want, 1e-5), "");
}

TEST(Moe, InversePermutationRestoresTokenOrder) {
  const Problem p = make_problem(moe_config(KernelKind::moe, 2, 8, 3, 2), true);
  World w(2, world_for(p.cfg));
  Moe<float> moe(w, p.cfg, p.routing);
  const auto& d = moe.mapping();
  const auto inv = moe.inverse_permutation();
  ASSERT_EQ(inv.size(), 16u);
  for (std::size_t i = 0; i < inv.size(); ++i) {
    EXPECT_EQ(d.row_token[inv[i]], i / 2);
    EXPECT_EQ(d.row_slot[inv[i]], static_cast<int>(i % 2));
  }
}

// ---- attention -----------------------------------------------------------

KernelConfig attention_config(int R, std::size_t seq, std::size_t heads, std::size_t hd) {
  KernelConfig c;
  c.kind = KernelKind::ag_kv_attention;
  c.world_size = R;
  c.seq = seq, c.heads = heads, c.head_dim = hd;
  c.tm_comm = seq / static_cast<std::size_t>(R) / 2;
  c.tm_comp = 4, c.tn_comp = 8, c.tk_comp = 1;
  return c;
}

TEST(AgKvAttention, SingleRankMatchesNaiveAttention) {
  const Problem p = make_problem(attention_config(1, 16, 2, 4), false);
  World w(1, world_for(p.cfg));
  KernelRunner k(w, p);
  EXPECT_EQ(check(k.run().out, test::oracle(p), 1e-5), "");
}

TEST(AgKvAttention, TwoRanksMatchNaiveAttention) {
  const Problem p = make_problem(attention_config(2, 64, 2, 8), false);
  World w(2, world_for(p.cfg));
  KernelRunner k(w, p);
  const auto out = k.run().out;
  EXPECT_EQ(check(out, test::oracle(p), 1e-4), "");
  EXPECT_EQ(check(out, run_reference(p), 1e-4), "");
}

TEST(AgKvAttention, ZeroKeysAndValuesGiveZero) {
  Problem p = make_problem(attention_config(2, 16, 2, 4), false);
  for (auto& v : p.attention.k) std::fill(v.begin(), v.end(), 0.0f);
  for (auto& v : p.attention.v) std::fill(v.begin(), v.end(), 0.0f);
  World w(2, world_for(p.cfg));
  KernelRunner k(w, p);
  for (const auto& rank : k.run().out) {
    for (float v : rank) ASSERT_EQ(v, 0.0f);
  }
}

// ---- references --------------------------------------------------------

TEST(References, AgreeWithIndependentOraclesAndAreDeterministic) {
  for (auto kind : {KernelKind::ag_gemm, KernelKind::gemm_rs, KernelKind::ag_moe, KernelKind::moe,
                    KernelKind::ag_kv_attention}) {
    for (int R : {1, 2, 4}) {
      const Problem p = make_problem(small_config(kind, R), false);
      const auto ref = run_reference(p);
      EXPECT_EQ(check(ref, test::oracle(p), 1e-5), "") << to_string(kind) << " R=" << R;
      EXPECT_EQ(ref, run_reference(p));
    }
  }
}

// ---- cross-cutting properties --------------------------------------------

struct Point {
  KernelKind kind;
  int R;
  TileOrder order;
  ResourceBinding binding;
  TransferMode mode;
};

std::string run_point(const Point& pt, bool integer, int channels = 1) {
  auto c = small_config(pt.kind, pt.R, 100 + pt.R);
  c.order = pt.order, c.binding = pt.binding, c.mode = pt.mode, c.channels = channels;
  if (channels > 1) c.tm_comm = 1;
  const Problem p = make_problem(c, integer);
  World w(pt.R, world_for(c));
  KernelRunner k(w, p);
  const auto got = k.run().out;
  const std::string a = check(got, run_reference(p), tolerance_for(p));
  if (!a.empty()) return "reference: " + a;
  const std::string b = check(got, test::oracle(p), std::max(tolerance_for(p), integer ? 0.0 : 1e-5));
  return b.empty() ? "" : "oracle: " + b;
}

TEST(KernelOracle, EveryKindOrderBindingAndModeOnFourRanks) {
  for (auto kind : {KernelKind::ag_gemm, KernelKind::gemm_rs, KernelKind::ag_moe, KernelKind::moe,
                    KernelKind::ag_kv_attention})
    for (auto order : {TileOrder::ring, TileOrder::all2all})
      for (auto binding : {ResourceBinding::core, ResourceBinding::copy_engine, ResourceBinding::hybrid})
        for (auto mode : {TransferMode::pull, TransferMode::push}) {
          const Point pt{kind, 4, order, binding, mode};
          EXPECT_EQ(run_point(pt, true), "") << to_string(kind) << " " << to_string(order) << " "
                                             << to_string(binding) << " " << to_string(mode);
        }
}

TEST(KernelOracle, MultipleChannelsPerRank) {
  for (auto kind : {KernelKind::ag_gemm, KernelKind::gemm_rs, KernelKind::moe, KernelKind::ag_kv_attention}) {
    EXPECT_EQ(run_point({kind, 2, TileOrder::ring, ResourceBinding::hybrid, TransferMode::push}, false, 2), "")
        << to_string(kind);
  }
}

TEST(Decoupling, CommTileSizeNeverChangesOutput) {
  for (auto kind : {KernelKind::ag_gemm, KernelKind::gemm_rs, KernelKind::moe, KernelKind::ag_kv_attention}) {
    std::vector<test::Out> outs;
    const std::vector<std::size_t> sizes = kind == KernelKind::ag_kv_attention ? std::vector<std::size_t>{1, 2, 4, 8}
                                           : kind == KernelKind::moe          ? std::vector<std::size_t>{1, 2, 4}
                                                                              : std::vector<std::size_t>{1, 2, 4, 8, 16};
    for (std::size_t tm : sizes) {
      auto c = small_config(kind, 2, 9);
      c.tm_comm = tm;
      const Problem p = make_problem(c, false);
      World w(2, world_for(c));
      KernelRunner k(w, p);
      outs.push_back(k.run().out);
    }
    for (std::size_t i = 1; i < outs.size(); ++i) EXPECT_EQ(outs[i], outs[0]) << to_string(kind) << " tm_comm " << sizes[i];
  }
}

TEST(OrderIndependence, RingAndAllToAllAgree) {
  for (auto kind : {KernelKind::ag_gemm, KernelKind::gemm_rs, KernelKind::ag_moe, KernelKind::moe,
                    KernelKind::ag_kv_attention}) {
    test::Out outs[2];
    int i = 0;
    for (auto order : {TileOrder::ring, TileOrder::all2all}) {
      auto c = small_config(kind, 4, 21);
      c.order = order;
      const Problem p = make_problem(c, false);
      World w(4, world_for(c));
      KernelRunner k(w, p);
      outs[i++] = k.run().out;
    }
    EXPECT_EQ(check(outs[1], outs[0], 1e-5), "") << to_string(kind);
  }
}

TEST(Epochs, RunningTwiceOnOneWorldGivesIdenticalResults) {
  for (auto kind : {KernelKind::ag_gemm, KernelKind::gemm_rs, KernelKind::ag_moe, KernelKind::moe,
                    KernelKind::ag_kv_attention}) {
    const Problem p = make_problem(small_config(kind, 4), false);
    World w(4, world_for(p.cfg));
    KernelRunner k(w, p);
    const auto first = k.run().out;
    const auto second = k.run().out;
    EXPECT_EQ(first, second) << to_string(kind);
    EXPECT_EQ(check(first, run_reference(p), tolerance_for(p)), "") << to_string(kind);
  }
}

TEST(Progress, ComputeTilesFinishWhileCommunicationIsInFlight) {
  KernelConfig c;
  c.kind = KernelKind::ag_gemm;
  c.world_size = 4;
  c.m = 128, c.n = 16, c.k = 16;
  c.tm_comm = 4, c.tm_comp = 4, c.tn_comp = 16, c.tk_comp = 16;
  c.binding = ResourceBinding::copy_engine;
  const Problem p = make_problem(c, true);
  WorldOptions o = world_for(c, false);
  o.trace = true;
  o.comm_delay = 200us;
  World w(4, o);
  KernelRunner k(w, p);
  EXPECT_EQ(k.run().out, test::oracle(p));
  const auto events = w.tracer().collect();
  const TraceSummary s = analyze_trace(events, w.layout(), k.notify_check(w.layout()));
  EXPECT_TRUE(s.ok()) << s.diagnostics.front();
  ASSERT_TRUE(s.first_compute_tile_end && s.last_copy_end);
  EXPECT_LT(*s.first_compute_tile_end, *s.last_copy_end);
}

TEST(Trace, NotifiesAreConsistentWithTheMappingForEveryKind) {
  for (auto kind : {KernelKind::ag_gemm, KernelKind::gemm_rs, KernelKind::ag_moe, KernelKind::moe,
                    KernelKind::ag_kv_attention}) {
    const Problem p = make_problem(small_config(kind, 2), true);
    WorldOptions o = world_for(p.cfg, false);
    o.trace = true;
    World w(2, o);
    KernelRunner k(w, p);
    k.run();
    const TraceSummary s = analyze_trace(w.tracer().collect(), w.layout(), k.notify_check(w.layout()));
    EXPECT_TRUE(s.ok()) << to_string(kind) << ": " << s.diagnostics.front();
  }
}

TEST(Trace, TwoRankRingReduceScatterHasTwoPeerWaits) {
  auto c = gemm_config(KernelKind::gemm_rs, 2, 16, 4, 4);
  c.tm_comm = 8, c.tm_comp = 8;
  const Problem p = make_problem(c, true);
  WorldOptions o = world_for(c, false);
  o.trace = true;
  World w(2, o);
  KernelRunner k(w, p);
  k.run();
  const TraceSummary s = analyze_trace(w.tracer().collect(), w.layout());
  EXPECT_EQ(s.total(&UnitSummary::peer_waits), 2u);
}

// ---- measurement -------------------------------------------------------

TEST(MeasureKernel, RepeatCountOnlyChangesTiming) {
  const Problem p = make_problem(small_config(KernelKind::ag_gemm, 2), true);
  World w(2, world_for(p.cfg, false));
  const OverlapReport one = measure_kernel(w, p, 1);
  const OverlapReport five = measure_kernel(w, p, 5);
  EXPECT_GT(one.comm_only_s, 0.0);
  EXPECT_GT(five.overlap_s, 0.0);
  KernelRunner k(w, p);
  EXPECT_EQ(k.run().out, test::oracle(p));
  EXPECT_THROW(measure_kernel(w, p, 0), ConfigError);
}

TEST(MeasureKernel, OverlappedRunStaysWithinTheSerialBudget) {
  KernelConfig c;
  c.kind = KernelKind::ag_gemm;
  c.world_size = 2;
  c.m = 64, c.n = 32, c.k = 32;
  c.tm_comm = 4, c.tm_comp = 4, c.tn_comp = 32, c.tk_comp = 32;
  c.binding = ResourceBinding::copy_engine;
  const Problem p = make_problem(c, true);
  WorldOptions o = world_for(c, false);
  o.comm_delay = 200us;
  World w(2, o);
  const OverlapReport r = measure_kernel(w, p, 3);
  EXPECT_TRUE(within_overlap_budget(r)) << r.overlap_s << " vs " << r.comp_only_s << " + " << r.comm_only_s;
  EXPECT_DOUBLE_EQ(r.ratio, overlap_ratio(r.comp_only_s, r.comm_only_s, r.overlap_s));
}

TEST(MeasureKernel, BudgetAllowsNoiseAndLaunchSlack) {
  OverlapReport r;
  r.comp_only_s = 1.0, r.comm_only_s = 1.0;
  r.overlap_s = 2.4 + 0.5 * kBudgetLaunchSlackS;
  EXPECT_TRUE(within_overlap_budget(r));
  r.overlap_s = 2.4 + 2 * kBudgetLaunchSlackS;
  EXPECT_FALSE(within_overlap_budget(r));
}

TEST(Median, OddAndEvenSamples) {
  EXPECT_EQ(median({3, 1, 2}), 2);
  EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
  EXPECT_THROW(median({}), DomainError);
}

// ---- comparison ----------------------------------------------------------

TEST(CompareOutputs, NamesTheFirstDifferingElement) {
  const test::Out want{{1, 2}, {3, 4}};
  const test::Out got{{1, 2}, {3, 5}};
  const Comparison c = compare_outputs(got, want, 0.0);
  EXPECT_FALSE(c.ok);
  EXPECT_EQ(c.first_rank, 1);
  EXPECT_EQ(c.first_index, 1u);
  EXPECT_DOUBLE_EQ(c.max_rel_error, 0.25);
  EXPECT_TRUE(compare_outputs(want, want, 0.0).ok);
  EXPECT_FALSE(compare_outputs({{1}}, want, 1.0).ok);
}

// ---- checksum stress ---------------------------------------------------

TEST(Checksum, JitteredSchedulesAreClean) {
  for (int seed = 0; seed < 40; ++seed) {
    ChecksumConfig c;
    c.world_size = 2 + seed % 3;
    c.channels = 1 + seed % 2;
    c.mode = seed % 2 ? TransferMode::pull : TransferMode::push;
    c.producers = 1 + seed % 2;
    WorldOptions o;
    o.channels_per_rank = c.channels;
    o.race_check = true;
    o.jitter_ns = 2000;
    o.seed = static_cast<std::uint64_t>(seed);
    World w(c.world_size, o);
    const ChecksumResult r = run_checksum(w, c, static_cast<std::uint64_t>(seed));
    ASSERT_EQ(r.torn_reads, 0u) << "seed " << seed;
    ASSERT_TRUE(r.violations.empty()) << r.violations.front();
    ASSERT_EQ(r.tiles_checked, static_cast<std::size_t>(c.world_size * c.channels) * c.tiles_per_channel);
  }
}

TEST(Checksum, DroppedNotifyDeadlocks) {
  // A dropped notify leaves a consumer blocked until the timeout.
  ChecksumConfig c;
  WorldOptions o;
  o.race_check = true;
  o.drop_first_notify = true;
  o.timeout = 100ms;
  World w(2, o);
  EXPECT_THROW(run_checksum(w, c, 1), DeadlockError);
}

}  // namespace
}  // namespace tilelink
