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

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tilelink/kernels/common.hpp"

namespace tilelink {

// Per-rank operands of a tensor-parallel GEMM.
template <class T>
struct GemmInputs {
  std::vector<std::vector<T>> a;  // ag_gemm: row shard of A; gemm_rs: A with a K shard
  std::vector<std::vector<T>> b;  // each rank's B
};

inline void check_world(const World& w, const KernelConfig& cfg) {
  if (w.world_size() != cfg.world_size || w.channels_per_rank() != cfg.channels) {
    throw ConfigError("kernel config (R=" + std::to_string(cfg.world_size) + ", C=" + std::to_string(cfg.channels) +
                      ") does not match the world (R=" + std::to_string(w.world_size()) +
                      ", C=" + std::to_string(w.channels_per_rank()) + ")");
  }
}

// AllGather + GEMM: every rank computes C = gather(A shards) * B_r. GEMM
// tiles wait only for the gathered rows they read.
template <class T>
class AgGemm {
 public:
  AgGemm(World& w, KernelConfig cfg) : w_(w), cfg_(std::move(cfg)), map_(cfg_.m, cfg_.world_size, cfg_.channels, cfg_.tm_comm) {
    if (cfg_.kind != KernelKind::ag_gemm) throw ConfigError("AgGemm needs kind ag_gemm");
    cfg_.validate();
    check_world(w_, cfg_);
    a_ = w_.alloc_symmetric<T>({cfg_.m, cfg_.k});
    b_ = w_.alloc_symmetric<T>({cfg_.k, cfg_.n});
    c_ = w_.alloc_symmetric<T>({cfg_.m, cfg_.n});
  }

  const StaticMapping& mapping() const { return map_; }

  KernelRun<T> run(const GemmInputs<T>& in, ExecMode mode = ExecMode::full) {
    const int R = cfg_.world_size;
    check_inputs(in);
    w_.begin_epoch(1, 0);
    for (RankId r = 0; r < R; ++r) {
      b_.upload(r, in.b[r]);
      if (mode == ExecMode::compute_only) {
        for (RankId s = 0; s < R; ++s) a_.upload(r, in.a[s], map_.rank_rows(s).lo);
      } else {
        a_.upload(r, in.a[r], map_.rank_rows(r).lo);
      }
    }

    AllGatherStage<T> ag(cfg_, map_, {a_}, 0);
    if (mode != ExecMode::compute_only) {
      ag.expect(w_);
      ag.build();
    }

    const RowTiles rows(map_, cfg_.tm_comp);
    const std::size_t col_tiles = ceil_div(cfg_.n, cfg_.tn_comp);
    RankTasks compute(R);
    for (RankId r = 0; r < R; ++r) {
      for (TileId i : order_row_tiles(rows, map_, tile_schedule(cfg_.order, r, R))) {
        for (std::size_t j = 0; j < col_tiles; ++j) {
          compute[r].add([this, &rows, i, j, mode](UnitContext& ctx) { gemm_tile(ctx, rows, i, j, mode); });
        }
      }
    }

    World::Program p;
    p.compute = [&](UnitContext& ctx) { compute[ctx.rank()].drain(ctx); };
    p.compute_workers = cfg_.comp_workers;
    if (mode != ExecMode::compute_only) {
      p.comm = [&](UnitContext& ctx) { ag.comm(ctx); };
      p.host = [&](UnitContext& ctx) { ag.host(ctx); };
      p.comm_workers = cfg_.comm_workers;
    }
    KernelRun<T> out;
    out.seconds = w_.run(p);
    for (RankId r = 0; r < R; ++r) out.out.push_back(c_.download(r));
    return out;
  }

 private:
  void check_inputs(const GemmInputs<T>& in) const {
    const auto R = static_cast<std::size_t>(cfg_.world_size);
    if (in.a.size() != R || in.b.size() != R) throw DomainError("ag_gemm: expected one A shard and one B per rank");
    for (RankId r = 0; r < cfg_.world_size; ++r) {
      if (in.a[r].size() != map_.rank_rows(r).size() * cfg_.k) {
        throw DomainError("ag_gemm: A shard of rank " + std::to_string(r) + " has the wrong size");
      }
      if (in.b[r].size() != cfg_.k * cfg_.n) {
        throw DomainError("ag_gemm: B of rank " + std::to_string(r) + " has the wrong size");
      }
    }
  }

  void gemm_tile(UnitContext& ctx, const RowTiles& tiles, TileId i, std::size_t j, ExecMode mode) {
    const RankId r = ctx.rank();
    ctx.consumer_tile_wait(tiles, i, 0);
    ctx.trace(EventKind::tile_start, i.get());
    if (mode != ExecMode::comm_only) {
      const ShapeRange rows = tiles.range(i);
      const std::size_t c0 = j * cfg_.tn_comp;
      const std::size_t width = std::min(cfg_.n, c0 + cfg_.tn_comp) - c0;
      const auto a = ctx.read_rows(a_, r, rows);
      const auto b = ctx.read_rows(b_, r, ShapeRange{0, cfg_.k});
      std::vector<T> block(rows.size() * width);
      gemm_block<T>(a, rows.size(), cfg_.k, b, cfg_.n, c0, width, cfg_.tk_comp, block);
      ctx.write_block(c_, r, rows, c0, width, std::span<const T>(block));
    }
    ctx.trace(EventKind::tile_end, i.get());
  }

  World& w_;
  KernelConfig cfg_;
  StaticMapping map_;
  SymmetricTensor<T> a_, b_, c_;
};

// GEMM + ReduceScatter: each rank computes a partial M x N product from its
// K shard; partial tiles flow into the reduce-scatter as soon as they are
// produced. Rank r ends up with rows [r*M/R, (r+1)*M/R) of the sum.
template <class T>
class GemmRs {
 public:
  GemmRs(World& w, KernelConfig cfg)
      : w_(w),
        cfg_(std::move(cfg)),
        map_(cfg_.m, cfg_.world_size, cfg_.channels, cfg_.tm_comm),
        a_(w.alloc_symmetric<T>({cfg_.m, cfg_.k})),
        b_(w.alloc_symmetric<T>({cfg_.k, cfg_.n})),
        partial_(w.alloc_symmetric<T>({cfg_.m, cfg_.n})),
        rs_(w, cfg_, map_, partial_, 0) {
    if (cfg_.kind != KernelKind::gemm_rs) throw ConfigError("GemmRs needs kind gemm_rs");
    cfg_.validate();
    check_world(w_, cfg_);
  }

  const StaticMapping& mapping() const { return map_; }

  // compute_only skips the reduce-scatter and returns the partials.
  KernelRun<T> run(const GemmInputs<T>& in, ExecMode mode = ExecMode::full) {
    const int R = cfg_.world_size;
    check_inputs(in);
    w_.begin_epoch(1, rs_.peer_slots());
    for (RankId r = 0; r < R; ++r) {
      a_.upload(r, in.a[r]);
      b_.upload(r, in.b[r]);
    }

    const RowTiles rows(map_, cfg_.tm_comp);
    const std::size_t col_tiles = ceil_div(cfg_.n, cfg_.tn_comp);
    for (RankId r = 0; r < R; ++r) expect_tiles(w_, r, 0, rows, col_tiles);
    if (mode != ExecMode::compute_only) rs_.build();

    RankTasks compute(R);
    for (RankId r = 0; r < R; ++r) {
      for (TileId i : order_row_tiles(rows, map_, consumption_order(r), true)) {
        for (std::size_t j = 0; j < col_tiles; ++j) {
          compute[r].add([this, &rows, i, j, mode](UnitContext& ctx) { gemm_tile(ctx, rows, i, j, mode); });
        }
      }
    }

    World::Program p;
    p.compute = [&](UnitContext& ctx) { compute[ctx.rank()].drain(ctx); };
    p.compute_workers = cfg_.comp_workers;
    if (mode != ExecMode::compute_only) {
      p.comm = [&](UnitContext& ctx) { rs_.comm(ctx); };
      p.host = [&](UnitContext& ctx) { rs_.host(ctx); };
      p.comm_workers = cfg_.comm_workers;
    }
    KernelRun<T> out;
    out.seconds = w_.run(p);
    for (RankId r = 0; r < R; ++r) {
      if (mode == ExecMode::compute_only) {
        out.out.push_back(partial_.download(r));
      } else {
        auto shard = rs_.output().download(r);
        shard.resize(map_.rank_rows(r).size() * cfg_.n);
        out.out.push_back(std::move(shard));
      }
    }
    return out;
  }

 private:
  // Chunks in the order the reduce-scatter of rank r consumes them.
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

  void check_inputs(const GemmInputs<T>& in) const {
    const auto R = static_cast<std::size_t>(cfg_.world_size);
    if (in.a.size() != R || in.b.size() != R) throw DomainError("gemm_rs: expected one A and one B per rank");
    for (RankId r = 0; r < cfg_.world_size; ++r) {
      if (in.a[r].size() != cfg_.m * cfg_.k) {
        throw DomainError("gemm_rs: A of rank " + std::to_string(r) + " has the wrong size");
      }
      if (in.b[r].size() != cfg_.k * cfg_.n) {
        throw DomainError("gemm_rs: B of rank " + std::to_string(r) + " has the wrong size");
      }
    }
  }

  void gemm_tile(UnitContext& ctx, const RowTiles& tiles, TileId i, std::size_t j, ExecMode mode) {
    const RankId r = ctx.rank();
    ctx.trace(EventKind::tile_start, i.get());
    if (mode != ExecMode::comm_only) {
      const ShapeRange rows = tiles.range(i);
      const std::size_t c0 = j * cfg_.tn_comp;
      const std::size_t width = std::min(cfg_.n, c0 + cfg_.tn_comp) - c0;
      const auto a = ctx.read_rows(a_, r, rows);
      const auto b = ctx.read_rows(b_, r, ShapeRange{0, cfg_.k});
      std::vector<T> block(rows.size() * width);
      gemm_block<T>(a, rows.size(), cfg_.k, b, cfg_.n, c0, width, cfg_.tk_comp, block);
      ctx.write_block(partial_, r, rows, c0, width, std::span<const T>(block));
    }
    ctx.trace(EventKind::tile_end, i.get());
    ctx.producer_tile_notify(toward(tiles, r), i, NotifyMode::p2p, 0);
  }

  World& w_;
  KernelConfig cfg_;
  StaticMapping map_;
  SymmetricTensor<T> a_, b_, partial_;
  ReduceScatterStage<T> rs_;
};

}  // namespace tilelink
