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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "tilelink/config.hpp"
#include "tilelink/kernels/attention.hpp"
#include "tilelink/kernels/gemm.hpp"
#include "tilelink/kernels/moe.hpp"
#include "tilelink/kernels/reference.hpp"
#include "tilelink/trace.hpp"

namespace tilelink {

// Seeded inputs for one kernel config. Integer-valued inputs are drawn from
// {-2, ..., 2} so movement-only paths can be checked exactly.
struct Problem {
  KernelConfig cfg;
  bool integer_inputs = true;
  GemmInputs<float> gemm;
  MoeInputs<float> moe;
  RoutingTable routing;
  AttentionInputs<float> attention;
};

inline Problem make_problem(const KernelConfig& cfg, bool integer_inputs) {
  cfg.validate();
  Problem p{cfg, integer_inputs, {}, {}, {}, {}};
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<int> small(-2, 2);
  std::uniform_real_distribution<float> real(-1.0f, 1.0f);
  auto fill = [&](std::size_t n) {
    std::vector<float> v(n);
    for (float& x : v) x = integer_inputs ? static_cast<float>(small(rng)) : real(rng);
    return v;
  };
  const int R = cfg.world_size;
  switch (cfg.kind) {
    case KernelKind::ag_gemm: {
      const StaticMapping map(cfg.m, R, cfg.channels, cfg.tm_comm);
      for (RankId r = 0; r < R; ++r) p.gemm.a.push_back(fill(map.rank_rows(r).size() * cfg.k));
      for (RankId r = 0; r < R; ++r) p.gemm.b.push_back(fill(cfg.k * cfg.n));
      break;
    }
    case KernelKind::gemm_rs:
      for (RankId r = 0; r < R; ++r) p.gemm.a.push_back(fill(cfg.m * cfg.k));
      for (RankId r = 0; r < R; ++r) p.gemm.b.push_back(fill(cfg.k * cfg.n));
      break;
    case KernelKind::ag_moe:
    case KernelKind::moe: {
      const std::size_t shard = cfg.tokens / static_cast<std::size_t>(R);
      const std::size_t slice = cfg.intermediate / static_cast<std::size_t>(R);
      const auto E = static_cast<std::size_t>(cfg.experts);
      for (RankId r = 0; r < R; ++r) p.moe.x.push_back(fill(shard * cfg.hidden));
      for (RankId r = 0; r < R; ++r) p.moe.w1.push_back(fill(E * cfg.hidden * slice));
      for (RankId r = 0; r < R; ++r) p.moe.w2.push_back(fill(E * slice * cfg.hidden));
      p.routing.num_experts = cfg.experts;
      p.routing.topk = cfg.topk;
      p.routing.tokens_per_rank = shard;
      std::vector<int> experts(E);
      for (std::size_t s = 0; s < cfg.tokens; ++s) {
        std::iota(experts.begin(), experts.end(), 0);
        for (int j = 0; j < cfg.topk; ++j) {
          std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(j), E - 1);
          std::swap(experts[static_cast<std::size_t>(j)], experts[pick(rng)]);
          p.routing.topk_ids.push_back(experts[static_cast<std::size_t>(j)]);
        }
      }
      break;
    }
    case KernelKind::ag_kv_attention: {
      const std::size_t n = cfg.seq / static_cast<std::size_t>(R) * cfg.heads * cfg.head_dim;
      for (RankId r = 0; r < R; ++r) p.attention.q.push_back(fill(n));
      for (RankId r = 0; r < R; ++r) p.attention.k.push_back(fill(n));
      for (RankId r = 0; r < R; ++r) p.attention.v.push_back(fill(n));
      break;
    }
  }
  return p;
}

// Builds the kernel object for a problem once; run() may be called
// repeatedly on the same world.
class KernelRunner {
 public:
  KernelRunner(World& w, const Problem& p) : p_(p) {
    switch (p.cfg.kind) {
      case KernelKind::ag_gemm: ag_gemm_ = std::make_unique<AgGemm<float>>(w, p.cfg); break;
      case KernelKind::gemm_rs: gemm_rs_ = std::make_unique<GemmRs<float>>(w, p.cfg); break;
      case KernelKind::ag_moe:
      case KernelKind::moe: moe_ = std::make_unique<Moe<float>>(w, p.cfg, p.routing); break;
      case KernelKind::ag_kv_attention: attention_ = std::make_unique<AgKvAttention<float>>(w, p.cfg); break;
    }
  }

  // Outputs are per rank; ag_moe rows come back in (token, slot) order.
  KernelRun<float> run(ExecMode mode = ExecMode::full) {
    switch (p_.cfg.kind) {
      case KernelKind::ag_gemm: return ag_gemm_->run(p_.gemm, mode);
      case KernelKind::gemm_rs: return gemm_rs_->run(p_.gemm, mode);
      case KernelKind::ag_moe: {
        KernelRun<float> out = moe_->run_first_half(p_.moe, mode);
        for (auto& rank : out.out) rank = unroute(rank);
        return out;
      }
      case KernelKind::moe: return moe_->run(p_.moe, mode);
      case KernelKind::ag_kv_attention: return attention_->run(p_.attention, mode);
    }
    throw ConfigError("unknown kernel");
  }

  // Static mapping of the communicated tensor.
  StaticMapping comm_mapping() const {
    const KernelConfig& c = p_.cfg;
    switch (c.kind) {
      case KernelKind::ag_gemm:
      case KernelKind::gemm_rs: return StaticMapping(c.m, c.world_size, c.channels, c.tm_comm);
      case KernelKind::ag_moe:
      case KernelKind::moe: return StaticMapping(c.tokens, c.world_size, c.channels, c.tm_comm);
      case KernelKind::ag_kv_attention: return StaticMapping(c.seq, c.world_size, c.channels, c.tm_comm);
    }
    throw ConfigError("unknown kernel");
  }

  // Checks producer-consumer notifies of a trace against the mappings of
  // the stage that owns each barrier set.
  NotifyCheck notify_check(const BoardLayout& layout) const {
    const KernelConfig c = p_.cfg;
    const std::size_t channels = static_cast<std::size_t>(c.world_size) * static_cast<std::size_t>(c.channels);
    const StaticMapping map = comm_mapping();
    const DynamicMapping* dyn = moe_ ? &moe_->mapping() : nullptr;
    return [=](std::size_t tile, std::size_t index) {
      if (layout.region(index) != BoardLayout::Region::producer_consumer) return true;
      const std::size_t set = index / channels;
      const ChannelId chan{index % channels};
      auto among = [&](const ChannelList& l) { return std::find(l.begin(), l.end(), chan) != l.end(); };
      auto row_tile = [&](std::size_t rows) {
        const RowTiles tiles(map, rows);
        return tile < tiles.num_tiles() && among(tiles.channels(TileId{tile}));
      };
      auto comm_tile = [&] { return tile < map.num_tiles() && map.channel(TileId{tile}) == chan; };
      switch (c.kind) {
        case KernelKind::ag_gemm:
        case KernelKind::ag_kv_attention: return set == 0 && comm_tile();
        case KernelKind::gemm_rs: return set == 0 && row_tile(c.tm_comp);
        case KernelKind::ag_moe:
        case KernelKind::moe:
          if (set == 0) return comm_tile();
          if (set == 1 || set == 2) return tile < dyn->num_tiles() && among(dyn->channels(TileId{tile}));
          return set == 3 && row_tile(c.tm_comp);
      }
      return false;
    };
  }

 private:
  std::vector<float> unroute(const std::vector<float>& grouped) const {
    const auto& inv = moe_->inverse_permutation();
    const std::size_t w = moe_->slice();
    std::vector<float> out(grouped.size());
    for (std::size_t i = 0; i < inv.size(); ++i) {
      std::copy_n(grouped.begin() + static_cast<std::ptrdiff_t>(inv[i] * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(i * w));
    }
    return out;
  }

  const Problem& p_;
  std::unique_ptr<AgGemm<float>> ag_gemm_;
  std::unique_ptr<GemmRs<float>> gemm_rs_;
  std::unique_ptr<Moe<float>> moe_;
  std::unique_ptr<AgKvAttention<float>> attention_;
};

inline std::vector<std::vector<float>> run_reference(const Problem& p) {
  switch (p.cfg.kind) {
    case KernelKind::ag_gemm: return reference_ag_gemm(p.cfg, p.gemm);
    case KernelKind::gemm_rs: return reference_gemm_rs(p.cfg, p.gemm);
    case KernelKind::ag_moe: return reference_moe_first_half(p.cfg, p.moe, p.routing);
    case KernelKind::moe: return reference_moe(p.cfg, p.moe, p.routing);
    case KernelKind::ag_kv_attention: return reference_attention(p.cfg, p.attention);
  }
  throw ConfigError("unknown kernel");
}

// Exact for integer inputs on movement-dominated kernels, 1e-5 relative
// otherwise, 1e-4 for attention.
inline double tolerance_for(const Problem& p) {
  switch (p.cfg.kind) {
    case KernelKind::ag_gemm:
    case KernelKind::gemm_rs:
    case KernelKind::ag_moe: return p.integer_inputs ? 0.0 : 1e-5;
    case KernelKind::moe: return 1e-5;
    case KernelKind::ag_kv_attention: return 1e-4;
  }
  return 0.0;
}

struct Comparison {
  bool ok = true;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  // First element whose error exceeds the tolerance.
  RankId first_rank = -1;
  std::size_t first_index = 0;
  std::string message;
};

// Relative error = |got - want| / max(max |want| over the rank's output, tiny).
inline Comparison compare_outputs(const std::vector<std::vector<float>>& got,
                                  const std::vector<std::vector<float>>& want, double tolerance) {
  Comparison c;
  c.tolerance = tolerance;
  if (got.size() != want.size()) {
    c.ok = false;
    c.message = "rank count differs";
    return c;
  }
  for (std::size_t r = 0; r < got.size(); ++r) {
    if (got[r].size() != want[r].size()) {
      c.ok = false;
      c.first_rank = static_cast<RankId>(r);
      c.message = "output size differs on rank " + std::to_string(r);
      return c;
    }
    double scale = 0.0;
    for (float v : want[r]) scale = std::max(scale, std::abs(static_cast<double>(v)));
    scale = std::max(scale, 1e-30);
    for (std::size_t i = 0; i < got[r].size(); ++i) {
      const double g = got[r][i];
      const double err = std::isfinite(g) ? std::abs(g - static_cast<double>(want[r][i])) / scale
                                          : std::numeric_limits<double>::infinity();
      c.max_rel_error = std::max(c.max_rel_error, err);
      if (err > tolerance && c.ok) {
        c.ok = false;
        c.first_rank = static_cast<RankId>(r);
        c.first_index = i;
      }
    }
  }
  if (!c.ok && c.message.empty()) {
    c.message = "mismatch: max relative error " + std::to_string(c.max_rel_error) + " (tolerance " +
                std::to_string(tolerance) + "), first differing element: rank " + std::to_string(c.first_rank) +
                " index " + std::to_string(c.first_index);
  }
  return c;
}

inline WorldOptions world_options(const RunConfig& rc) {
  WorldOptions o;
  o.channels_per_rank = rc.kernel.channels;
  o.timeout = std::chrono::milliseconds(rc.timeout_ms);
  o.race_check = rc.race_check;
  o.comm_delay = std::chrono::microseconds(rc.comm_delay_us);
  o.seed = rc.kernel.seed;
  o.drop_first_notify = rc.sabotage_drop_notify;
  return o;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw DomainError("median of an empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Three-run protocol: computation on pre-gathered inputs, communication
// with the arithmetic stubbed out, and the overlapped kernel; each is the
// median of `repeats` timed runs. The three modes are interleaved round by
// round so slow drift of the host affects them alike.
inline OverlapReport measure_kernel(World& w, const Problem& p, int repeats) {
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  KernelRunner runner(w, p);
  std::vector<double> comp, comm, full;
  for (int i = 0; i < repeats; ++i) {
    comp.push_back(runner.run(ExecMode::compute_only).seconds);
    comm.push_back(runner.run(ExecMode::comm_only).seconds);
    full.push_back(runner.run(ExecMode::full).seconds);
  }
  OverlapReport r;
  r.comp_only_s = median(std::move(comp));
  r.comm_only_s = median(std::move(comm));
  r.overlap_s = median(std::move(full));
  r.ratio = overlap_ratio(r.comp_only_s, r.comm_only_s, r.overlap_s);
  return r;
}

// Bench budget: the overlapped run may exceed comp_only + comm_only by 20%
// for scheduling noise, plus a fixed allowance for the extra contexts it
// launches, which dominates millisecond-scale desk runs.
inline constexpr double kBudgetNoise = 0.2;
inline constexpr double kBudgetLaunchSlackS = 2e-3;

inline bool within_overlap_budget(const OverlapReport& r) {
  return r.overlap_s <= (1.0 + kBudgetNoise) * (r.comp_only_s + r.comm_only_s) + kBudgetLaunchSlackS;
}

}  // namespace tilelink
