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
#include <cstddef>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tilelink/kernels/common.hpp"
#include "tilelink/kernels/gemm.hpp"

namespace tilelink {

// Tensor-parallel MoE operands. Tokens are row-sharded over ranks; every
// rank holds the I/R slice of every expert's weights.
template <class T>
struct MoeInputs {
  std::vector<std::vector<T>> x;   // per rank: (S/R) x H token shard
  std::vector<std::vector<T>> w1;  // per rank: E x H x (I/R)
  std::vector<std::vector<T>> w2;  // per rank: E x (I/R) x H
  // Only for the second half on its own: per rank grouped activations,
  // (S*k) x (I/R) in grouped row order.
  std::vector<std::vector<T>> hidden;
};

// AllGather + gather-fused grouped GEMM, followed by a second grouped GEMM,
// top-k combine and ReduceScatter. Stages are chained through barrier sets:
//   0  gathered token rows (static channels)
//   1  first grouped GEMM tiles  -> second grouped GEMM (dynamic channels)
//   2  second grouped GEMM tiles -> top-k combine (dynamic channels)
//   3  combined token tiles      -> reduce-scatter (static channels)
template <class T>
class Moe {
 public:
  enum class Part { first_half, second_half, both };

  Moe(World& w, KernelConfig cfg, RoutingTable routing)
      : w_(w),
        cfg_(std::move(cfg)),
        routing_(std::move(routing)),
        tokens_(cfg_.tokens, cfg_.world_size, cfg_.channels, cfg_.tm_comm) {
    if (cfg_.kind != KernelKind::ag_moe && cfg_.kind != KernelKind::moe) {
      throw ConfigError("Moe needs kind ag_moe or moe");
    }
    cfg_.validate();
    check_world(w_, cfg_);
    if (routing_.num_experts != cfg_.experts || routing_.topk != cfg_.topk ||
        routing_.num_tokens() != cfg_.tokens) {
      throw ConfigError("routing table does not match the kernel config");
    }
    dyn_ = build_dynamic_mapping(routing_, cfg_.tm_comp, cfg_.world_size, cfg_.channels);
    inverse_ = dyn_.inverse_permutation();
    slice_ = cfg_.intermediate / static_cast<std::size_t>(cfg_.world_size);
    const std::size_t E = static_cast<std::size_t>(cfg_.experts);
    const std::size_t routed = dyn_.num_rows();
    x_ = w_.alloc_symmetric<T>({cfg_.tokens, cfg_.hidden});
    w1_ = w_.alloc_symmetric<T>({E * cfg_.hidden, slice_});
    w2_ = w_.alloc_symmetric<T>({E * slice_, cfg_.hidden});
    h_ = w_.alloc_symmetric<T>({routed, slice_});
    y_ = w_.alloc_symmetric<T>({routed, cfg_.hidden});
    z_ = w_.alloc_symmetric<T>({cfg_.tokens, cfg_.hidden});
    rs_ = std::make_unique<ReduceScatterStage<T>>(w_, cfg_, tokens_, z_, 3);
    build_dependencies();
  }

  const DynamicMapping& mapping() const { return dyn_; }
  // inverse[token * topk + slot] = grouped row.
  const std::vector<std::size_t>& inverse_permutation() const { return inverse_; }
  std::size_t slice() const { return slice_; }

  // Per rank: grouped activations (S*k) x (I/R).
  KernelRun<T> run_first_half(const MoeInputs<T>& in, ExecMode mode = ExecMode::full) {
    return execute(in, Part::first_half, mode);
  }
  // Per rank: output shard (S/R) x H.
  KernelRun<T> run_second_half(const MoeInputs<T>& in, ExecMode mode = ExecMode::full) {
    return execute(in, Part::second_half, mode);
  }
  KernelRun<T> run(const MoeInputs<T>& in, ExecMode mode = ExecMode::full) { return execute(in, Part::both, mode); }

 private:
  void build_dependencies() {
    // First GEMM tile t reads the gathered token rows of its grouped rows.
    first_deps_.ranges.clear();
    for (std::size_t t = 0; t < dyn_.num_tiles(); ++t) {
      const ShapeRange rows = dyn_.range(TileId{t});
      std::set<std::size_t> chans;
      for (std::size_t g = rows.lo; g < rows.hi; ++g) chans.insert(tokens_.channel_of_row(dyn_.row_token[g]).get());
      first_deps_.ranges.push_back(rows);
      first_deps_.ranks.push_back(dyn_.rank(TileId{t}));
      first_deps_.deps.push_back(to_list(chans));
    }
    // Combine tile reads every grouped row of its tokens.
    const RowTiles combine(tokens_, cfg_.tm_comp);
    for (std::size_t i = 0; i < combine.num_tiles(); ++i) {
      const ShapeRange toks = combine.range(TileId{i});
      std::set<std::size_t> chans;
      for (std::size_t s = toks.lo; s < toks.hi; ++s) {
        for (int j = 0; j < cfg_.topk; ++j) {
          const std::size_t g = inverse_[s * static_cast<std::size_t>(cfg_.topk) + static_cast<std::size_t>(j)];
          chans.insert(dyn_.channels(TileId{g / cfg_.tm_comp}).front().get());
        }
      }
      combine_deps_.ranges.push_back(toks);
      combine_deps_.ranks.push_back(tokens_.rank_of_row(toks.lo));
      combine_deps_.deps.push_back(to_list(chans));
    }
  }

  static ChannelList to_list(const std::set<std::size_t>& s) {
    ChannelList out;
    for (std::size_t c : s) out.push_back(ChannelId{c});
    return out;
  }

  void check_inputs(const MoeInputs<T>& in, Part part) const {
    const auto R = static_cast<std::size_t>(cfg_.world_size);
    const std::size_t E = static_cast<std::size_t>(cfg_.experts);
    auto check = [&](const std::vector<std::vector<T>>& v, std::size_t n, const char* what) {
      if (v.size() != R) throw DomainError(std::string("moe: expected one ") + what + " per rank");
      for (const auto& b : v) {
        if (b.size() != n) throw DomainError(std::string("moe: ") + what + " has the wrong size");
      }
    };
    if (part != Part::second_half) {
      check(in.x, cfg_.tokens / R * cfg_.hidden, "token shard");
      check(in.w1, E * cfg_.hidden * slice_, "first expert weight");
    } else {
      check(in.hidden, dyn_.num_rows() * slice_, "grouped activation");
    }
    if (part != Part::first_half) check(in.w2, E * slice_ * cfg_.hidden, "second expert weight");
  }

  // Dynamic tiles ordered by when their tokens arrive under rank r's schedule.
  std::vector<TileId> grouped_order(RankId r) const {
    const auto sched = tile_schedule(cfg_.order, r, cfg_.world_size);
    std::vector<std::size_t> pos(sched.size());
    for (std::size_t i = 0; i < sched.size(); ++i) pos[static_cast<std::size_t>(sched[i])] = i;
    std::vector<std::pair<std::size_t, std::size_t>> keyed;
    for (std::size_t t = 0; t < dyn_.num_tiles(); ++t) {
      const ShapeRange rows = dyn_.range(TileId{t});
      std::size_t key = 0;
      for (std::size_t g = rows.lo; g < rows.hi; ++g) {
        key = std::max(key, pos[static_cast<std::size_t>(tokens_.rank_of_row(dyn_.row_token[g]))]);
      }
      keyed.emplace_back(key, t);
    }
    std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<TileId> out;
    for (const auto& [k, t] : keyed) out.push_back(TileId{t});
    return out;
  }

  std::vector<RankId> consumption_order(RankId r) const {
    const int R = cfg_.world_size;
    std::vector<RankId> out;
    if (cfg_.order == TileOrder::ring) {
      for (int s = 0; s < R; ++s) out.push_back((r + s + 1) % R);
    } else {
      for (RankId c : tile_schedule(TileOrder::all2all, r, R)) {
        if (c != r) out.push_back(c);
      }
      out.push_back(r);
    }
    return out;
  }

  KernelRun<T> execute(const MoeInputs<T>& in, Part part, ExecMode mode) {
    const int R = cfg_.world_size;
    check_inputs(in, part);
    const bool first = part != Part::second_half;
    const bool second = part != Part::first_half;
    const bool comm = mode != ExecMode::compute_only;
    const bool math = mode != ExecMode::comm_only;
    const std::size_t shard = cfg_.tokens / static_cast<std::size_t>(R);

    w_.begin_epoch(4, rs_->peer_slots());
    for (RankId r = 0; r < R; ++r) {
      if (first) {
        w1_.upload(r, in.w1[r]);
        if (comm) {
          x_.upload(r, in.x[r], static_cast<std::size_t>(r) * shard);
        } else {
          for (RankId s = 0; s < R; ++s) x_.upload(r, in.x[s], static_cast<std::size_t>(s) * shard);
        }
      } else {
        h_.upload(r, in.hidden[r]);
      }
      if (second) w2_.upload(r, in.w2[r]);
    }

    AllGatherStage<T> ag(cfg_, tokens_, {x_}, 0);
    const RowTiles combine(tokens_, cfg_.tm_comp);
    if (first && comm) {
      ag.expect(w_);
      ag.build();
    }
    for (RankId r = 0; r < R; ++r) {
      if (first) expect_tiles(w_, r, 1, dyn_);
      if (second) {
        expect_tiles(w_, r, 2, dyn_);
        expect_tiles(w_, r, 3, combine);
      }
    }
    if (second && comm) rs_->build();

    RankTasks compute(R);
    for (RankId r = 0; r < R; ++r) {
      const auto order = grouped_order(r);
      if (first) {
        for (TileId t : order) compute[r].add([this, t, math](UnitContext& ctx) { first_gemm(ctx, t, math); });
      }
      if (second) {
        for (TileId t : order) compute[r].add([this, t, math](UnitContext& ctx) { second_gemm(ctx, t, math); });
        for (TileId i : order_row_tiles(combine, tokens_, consumption_order(r), true)) {
          compute[r].add([this, &combine, i, math](UnitContext& ctx) { combine_tile(ctx, combine, i, math); });
        }
      }
    }

    World::Program p;
    p.compute = [&](UnitContext& ctx) { compute[ctx.rank()].drain(ctx); };
    p.compute_workers = cfg_.comp_workers;
    const bool gather = first && comm;
    const bool scatter = second && comm;
    if (gather || scatter) {
      p.comm = [&](UnitContext& ctx) {
        if (gather) ag.comm(ctx);
        if (scatter) rs_->comm(ctx);
      };
      p.host = [&](UnitContext& ctx) {
        if (gather) ag.host(ctx);
        if (scatter) rs_->host(ctx);
      };
      p.comm_workers = cfg_.comm_workers;
    }
    KernelRun<T> out;
    out.seconds = w_.run(p);
    for (RankId r = 0; r < R; ++r) {
      if (!second) {
        out.out.push_back(h_.download(r));
      } else if (!comm) {
        out.out.push_back(z_.download(r));
      } else {
        auto v = rs_->output().download(r);
        v.resize(tokens_.rank_rows(r).size() * cfg_.hidden);
        out.out.push_back(std::move(v));
      }
    }
    return out;
  }

  // h[g] = x[token(g)] * W1[expert(g)], gather fused through the grouped layout.
  void first_gemm(UnitContext& ctx, TileId t, bool math) {
    const RankId r = ctx.rank();
    ctx.consumer_tile_wait(first_deps_, t, 0);
    ctx.trace(EventKind::tile_start, t.get());
    const ShapeRange rows = dyn_.range(t);
    if (math) {
      std::vector<T> out(rows.size() * slice_);
      for (std::size_t g = rows.lo; g < rows.hi; ++g) {
        const std::size_t tok = dyn_.row_token[g];
        const auto e = static_cast<std::size_t>(dyn_.row_expert[g]);
        const auto x = ctx.read_rows(x_, r, ShapeRange{tok, tok + 1});
        const auto w = ctx.read_rows(w1_, r, ShapeRange{e * cfg_.hidden, (e + 1) * cfg_.hidden});
        gemm_block<T>(x, 1, cfg_.hidden, w, slice_, 0, slice_, cfg_.tk_comp,
                      std::span<T>(out).subspan((g - rows.lo) * slice_, slice_));
      }
      ctx.write_rows(h_, r, rows, std::span<const T>(out));
    }
    ctx.trace(EventKind::tile_end, t.get());
    ctx.producer_tile_notify(toward(dyn_, r), t, NotifyMode::p2p, 1);
  }

  // y[g] = h[g] * W2[expert(g)]: this rank's partial of the second projection.
  void second_gemm(UnitContext& ctx, TileId t, bool math) {
    const RankId r = ctx.rank();
    ctx.consumer_tile_wait(dyn_, t, 1);
    ctx.trace(EventKind::tile_start, t.get());
    const ShapeRange rows = dyn_.range(t);
    if (math) {
      std::vector<T> out(rows.size() * cfg_.hidden);
      const auto h = ctx.read_rows(h_, r, rows);
      for (std::size_t g = rows.lo; g < rows.hi; ++g) {
        const auto e = static_cast<std::size_t>(dyn_.row_expert[g]);
        const auto w = ctx.read_rows(w2_, r, ShapeRange{e * slice_, (e + 1) * slice_});
        gemm_block<T>(h.subspan((g - rows.lo) * slice_, slice_), 1, slice_, w, cfg_.hidden, 0, cfg_.hidden,
                      cfg_.tk_comp, std::span<T>(out).subspan((g - rows.lo) * cfg_.hidden, cfg_.hidden));
      }
      ctx.write_rows(y_, r, rows, std::span<const T>(out));
    }
    ctx.trace(EventKind::tile_end, t.get());
    ctx.producer_tile_notify(toward(dyn_, r), t, NotifyMode::p2p, 2);
  }

  // z[s] = (sum over slots j of y[inverse(s, j)]) / k, slots ascending.
  void combine_tile(UnitContext& ctx, const RowTiles& tiles, TileId i, bool math) {
    const RankId r = ctx.rank();
    ctx.consumer_tile_wait(combine_deps_, i, 2);
    ctx.trace(EventKind::tile_start, i.get());
    const ShapeRange toks = tiles.range(i);
    if (math) {
      const std::size_t H = cfg_.hidden;
      const auto k = static_cast<std::size_t>(cfg_.topk);
      const T scale = T(1) / static_cast<T>(k);
      std::vector<T> out(toks.size() * H, T{});
      for (std::size_t s = toks.lo; s < toks.hi; ++s) {
        T* o = out.data() + (s - toks.lo) * H;
        for (std::size_t j = 0; j < k; ++j) {
          const std::size_t g = inverse_[s * k + j];
          const auto y = ctx.read_rows(y_, r, ShapeRange{g, g + 1});
          for (std::size_t c = 0; c < H; ++c) o[c] += y[c];
        }
        for (std::size_t c = 0; c < H; ++c) o[c] *= scale;
      }
      ctx.write_rows(z_, r, toks, std::span<const T>(out));
    }
    ctx.trace(EventKind::tile_end, i.get());
    ctx.producer_tile_notify(toward(tiles, r), i, NotifyMode::p2p, 3);
  }

  World& w_;
  KernelConfig cfg_;
  RoutingTable routing_;
  StaticMapping tokens_;
  DynamicMapping dyn_;
  std::vector<std::size_t> inverse_;
  std::size_t slice_ = 0;
  ListMapping first_deps_;
  ListMapping combine_deps_;
  SymmetricTensor<T> x_, w1_, w2_, h_, y_, z_;
  std::unique_ptr<ReduceScatterStage<T>> rs_;
};

}  // namespace tilelink
