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
#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tilelink/mapping.hpp"
#include "tilelink/runtime.hpp"
#include "tilelink/transfer.hpp"

namespace tilelink {

enum class KernelKind { ag_gemm, gemm_rs, ag_moe, moe, ag_kv_attention };

constexpr std::string_view to_string(KernelKind k) {
  switch (k) {
    case KernelKind::ag_gemm: return "ag_gemm";
    case KernelKind::gemm_rs: return "gemm_rs";
    case KernelKind::ag_moe: return "ag_moe";
    case KernelKind::moe: return "moe";
    case KernelKind::ag_kv_attention: return "ag_kv_attention";
  }
  return "?";
}

inline KernelKind parse_kernel_kind(std::string_view s) {
  for (auto k : {KernelKind::ag_gemm, KernelKind::gemm_rs, KernelKind::ag_moe, KernelKind::moe,
                 KernelKind::ag_kv_attention}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown kernel '" + std::string(s) + "'");
}

// Which parts of a kernel actually execute. compute_only starts from
// pre-gathered inputs and skips communication; comm_only keeps every
// transfer and signal but turns the arithmetic into no-ops.
enum class ExecMode { full, compute_only, comm_only };

// One point of the decoupled design space plus the problem sizes.
struct KernelConfig {
  KernelKind kind = KernelKind::ag_gemm;
  int world_size = 1;
  int channels = 1;

  // GEMM kernels: C[M, N] = A[M, K] * B[K, N].
  std::size_t m = 1, n = 1, k = 1;
  // MoE: total tokens, hidden size, intermediate size (split over ranks).
  std::size_t tokens = 1, hidden = 1, intermediate = 1;
  int experts = 1, topk = 1;
  // Attention.
  std::size_t heads = 1, head_dim = 1, seq = 1;

  std::size_t tm_comm = 1;
  std::size_t tm_comp = 1, tn_comp = 1, tk_comp = 1;

  TileOrder order = TileOrder::ring;
  ResourceBinding binding = ResourceBinding::core;
  TransferMode mode = TransferMode::pull;
  // Workers granted to communication (the "SMs for communication" share)
  // and to computation, per rank.
  int comm_workers = 1;
  int comp_workers = 1;
  std::uint64_t seed = 0;

  friend bool operator==(const KernelConfig&, const KernelConfig&) = default;

  void validate() const {
    auto positive = [](std::size_t v, const char* what) {
      if (v < 1) throw ConfigError(std::string(what) + " must be >= 1");
    };
    if (world_size < 1) throw ConfigError("world_size must be >= 1");
    if (channels < 1) throw ConfigError("channels must be >= 1");
    if (comm_workers < 1 || comp_workers < 1) throw ConfigError("worker counts must be >= 1");
    positive(tm_comm, "tm_comm");
    positive(tm_comp, "tm_comp");
    positive(tn_comp, "tn_comp");
    positive(tk_comp, "tk_comp");
    const auto R = static_cast<std::size_t>(world_size);
    switch (kind) {
      case KernelKind::ag_gemm:
      case KernelKind::gemm_rs:
        positive(m, "m");
        positive(n, "n");
        positive(k, "k");
        StaticMapping(m, world_size, channels, tm_comm).require_block_aligned();
        break;
      case KernelKind::ag_moe:
      case KernelKind::moe:
        positive(tokens, "tokens");
        positive(hidden, "hidden");
        positive(intermediate, "intermediate");
        if (experts < 1) throw ConfigError("experts must be >= 1");
        if (topk < 1 || topk > experts) throw ConfigError("topk must be in [1, experts]");
        if (tokens % R != 0) throw ConfigError("tokens must divide evenly over ranks");
        if (intermediate % R != 0) throw ConfigError("intermediate must divide evenly over ranks");
        StaticMapping(tokens, world_size, channels, tm_comm).require_block_aligned();
        break;
      case KernelKind::ag_kv_attention:
        positive(heads, "heads");
        positive(head_dim, "head_dim");
        positive(seq, "seq");
        if (seq % R != 0) throw ConfigError("seq must be divisible by the world size for attention");
        StaticMapping(seq, world_size, channels, tm_comm).require_block_aligned();
        break;
    }
  }
};

// Order in which rank r visits source (or destination) ranks. Both orders
// start at r. ring: r, r-1, ..., r+1 (mod R). all2all: r, then the rest
// ascending.
inline std::vector<RankId> tile_schedule(TileOrder order, RankId r, int world) {
  if (r < 0 || r >= world) throw DomainError("tile_schedule: rank out of range");
  std::vector<RankId> out{r};
  for (int i = 1; i < world; ++i) {
    if (order == TileOrder::ring) {
      out.push_back((r - i + world) % world);
    } else {
      const RankId other = i - 1 < r ? i - 1 : i;
      out.push_back(other);
    }
  }
  return out;
}

// hybrid splits communication tiles between copy engine (even) and cores (odd).
inline bool via_copy_engine(ResourceBinding b, TileId t) {
  switch (b) {
    case ResourceBinding::core: return false;
    case ResourceBinding::copy_engine: return true;
    case ResourceBinding::hybrid: return t.get() % 2 == 0;
  }
  return false;
}

// Ordered tasks of one rank, drained cooperatively by a worker pool.
// Every task may only depend on tasks earlier in the list (or on other
// ranks), so any number of workers makes progress.
class TaskList {
 public:
  using Task = std::function<void(UnitContext&)>;

  void add(Task t) { tasks_.push_back(std::move(t)); }
  std::size_t size() const { return tasks_.size(); }
  void reset() { next_.store(0); }

  void drain(UnitContext& ctx) {
    for (std::size_t i = next_.fetch_add(1); i < tasks_.size(); i = next_.fetch_add(1)) {
      tasks_[i](ctx);
      std::this_thread::yield();
    }
  }

 private:
  std::vector<Task> tasks_;
  std::atomic<std::size_t> next_{0};
};

struct RankTasks {
  std::vector<std::unique_ptr<TaskList>> per_rank;

  explicit RankTasks(int world) {
    for (int r = 0; r < world; ++r) per_rank.push_back(std::make_unique<TaskList>());
  }
  TaskList& operator[](RankId r) { return *per_rank[static_cast<std::size_t>(r)]; }
};

// Mapping that shifts a static tile's rows by `offset` and targets one rank.
struct ShiftedTarget {
  const StaticMapping* base;
  std::ptrdiff_t offset;
  RankId target;

  std::size_t num_tiles() const { return base->num_tiles(); }
  ShapeRange range(TileId t) const {
    const ShapeRange r = base->range(t);
    return {static_cast<std::size_t>(static_cast<std::ptrdiff_t>(r.lo) + offset),
            static_cast<std::size_t>(static_cast<std::ptrdiff_t>(r.hi) + offset)};
  }
  RankId rank(TileId) const { return target; }
  ChannelList channels(TileId t) const { return base->channels(t); }
};

// Row-major host matrix product block: out[rows, cols] = a[rows, K] * b[K, cols]
// accumulating k in ascending order (in chunks of tk). `b` has row stride ldb
// and the block starts at column col_lo.
template <class T>
void gemm_block(std::span<const T> a, std::size_t rows, std::size_t K, std::span<const T> b, std::size_t ldb,
                std::size_t col_lo, std::size_t cols, std::size_t tk, std::span<T> out) {
  std::fill(out.begin(), out.end(), T{});
  for (std::size_t k0 = 0; k0 < K; k0 += tk) {
    const std::size_t k1 = std::min(K, k0 + tk);
    for (std::size_t i = 0; i < rows; ++i) {
      T* o = out.data() + i * cols;
      for (std::size_t kk = k0; kk < k1; ++kk) {
        const T av = a[i * K + kk];
        const T* brow = b.data() + kk * ldb + col_lo;
        for (std::size_t j = 0; j < cols; ++j) o[j] += av * brow[j];
      }
    }
  }
}

// Compute row tiles ordered by when their rows become available under a
// per-rank schedule: key is the latest schedule position among the ranks
// owning the tile's rows (or the earliest, when `earliest` is set).
inline std::vector<TileId> order_row_tiles(const RowTiles& tiles, const StaticMapping& layout,
                                           const std::vector<RankId>& sched, bool earliest = false) {
  std::vector<std::size_t> pos(sched.size());
  for (std::size_t i = 0; i < sched.size(); ++i) pos[static_cast<std::size_t>(sched[i])] = i;
  std::vector<std::pair<std::size_t, std::size_t>> keyed;
  for (std::size_t t = 0; t < tiles.num_tiles(); ++t) {
    const ShapeRange rows = tiles.range(TileId{t});
    const std::size_t a = pos[static_cast<std::size_t>(layout.rank_of_row(rows.lo))];
    const std::size_t b = pos[static_cast<std::size_t>(layout.rank_of_row(rows.hi - 1))];
    std::size_t key = earliest ? std::min(a, b) : std::max(a, b);
    // A tile may straddle more than two rank blocks when tiles are large.
    for (std::size_t row = rows.lo; row < rows.hi; row += layout.rows_per_rank()) {
      const std::size_t p = pos[static_cast<std::size_t>(layout.rank_of_row(row))];
      key = earliest ? std::min(key, p) : std::max(key, p);
    }
    keyed.emplace_back(key, t);
  }
  std::stable_sort(keyed.begin(), keyed.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  std::vector<TileId> out;
  for (const auto& [key, t] : keyed) out.push_back(TileId{t});
  return out;
}

// Per-rank outputs of one kernel invocation.
template <class T>
struct KernelRun {
  std::vector<std::vector<T>> out;
  double seconds = 0.0;
};

// Adds, for every producer tile, one expected arrival per channel its rows
// touch on `board`.
template <TileMapping M>
void expect_tiles(World& w, RankId board, std::size_t set, const M& producers, std::size_t copies_per_tile = 1) {
  for (std::size_t t = 0; t < producers.num_tiles(); ++t) {
    for (ChannelId c : producers.channels(TileId{t})) {
      w.expect_arrivals(board, set, c, static_cast<std::uint32_t>(copies_per_tile));
    }
  }
}

// AllGather of row-sharded tensors into full-size symmetric buffers. Each
// rank's shard already sits in its own rows of the full buffer. Every tile
// landing on a rank is signalled on that rank's channel f_C(t) in `set`.
template <class T>
class AllGatherStage {
 public:
  AllGatherStage(const KernelConfig& cfg, StaticMapping map, std::vector<SymmetricTensor<T>> full, std::size_t set)
      : cfg_(cfg), map_(std::move(map)), full_(std::move(full)), set_(set), tasks_(cfg.world_size) {
    map_.require_block_aligned();
  }

  const StaticMapping& mapping() const { return map_; }
  std::size_t set() const { return set_; }

  void expect(World& w) const {
    for (RankId r = 0; r < w.world_size(); ++r) expect_tiles(w, r, set_, map_);
  }

  void build() {
    const int R = cfg_.world_size;
    tasks_ = RankTasks(R);
    for (RankId r = 0; r < R; ++r) {
      TaskList& list = tasks_[r];
      const auto sched = tile_schedule(cfg_.order, r, R);
      for (RankId peer : sched) {
        // pull: `peer` is the source; push: `peer` is the destination of r's tiles.
        const RankId src = cfg_.mode == TransferMode::pull ? peer : r;
        const RankId dst = cfg_.mode == TransferMode::pull ? r : peer;
        for (TileId t : map_.tiles_of_rank(src)) {
          if (via_copy_engine(cfg_.binding, t)) continue;
          list.add([this, src, dst, t](UnitContext& ctx) { move_on_core(ctx, src, dst, t); });
        }
      }
    }
  }

  void comm(UnitContext& ctx) { tasks_[ctx.rank()].drain(ctx); }

  // Host side of copy-engine tiles: issue copies, then turn completions
  // into consumer notifications in issue order.
  void host(UnitContext& ctx) {
    if (cfg_.binding == ResourceBinding::core) return;
    const RankId r = ctx.rank();
    const int R = cfg_.world_size;
    const auto sched = tile_schedule(cfg_.order, r, R);
    const auto local = toward(map_, r);
    for (TileId t : map_.tiles_of_rank(r)) {
      if (via_copy_engine(cfg_.binding, t)) ctx.producer_tile_notify(local, t, NotifyMode::p2p, set_);
    }
    if (cfg_.mode == TransferMode::pull) {
      std::vector<TileId> issued;
      for (RankId src : sched) {
        if (src == r) continue;
        for (TileId t : map_.tiles_of_rank(src)) {
          if (!via_copy_engine(cfg_.binding, t)) continue;
          for (const auto& tensor : full_) {
            rank_copy_data(ctx, TensorSlice<T>{tensor, src, map_.range(t)}, TensorSlice<T>{tensor, r, map_.range(t)}, t);
          }
          issued.push_back(t);
        }
      }
      for (TileId t : issued) {
        for (std::size_t i = 0; i < full_.size(); ++i) ctx.rank_wait(r);
        ctx.producer_tile_notify(local, t, NotifyMode::p2p, set_);
      }
    } else {
      for (RankId dst : sched) {
        if (dst == r) continue;
        for (TileId t : map_.tiles_of_rank(r)) {
          if (!via_copy_engine(cfg_.binding, t)) continue;
          for (const auto& tensor : full_) {
            rank_copy_data(ctx, TensorSlice<T>{tensor, r, map_.range(t)}, TensorSlice<T>{tensor, dst, map_.range(t)}, t);
          }
        }
      }
      for (RankId src : sched) {
        if (src == r) continue;
        for (TileId t : map_.tiles_of_rank(src)) {
          if (!via_copy_engine(cfg_.binding, t)) continue;
          for (std::size_t i = 0; i < full_.size(); ++i) ctx.rank_wait(src);
          ctx.producer_tile_notify(local, t, NotifyMode::p2p, set_);
        }
      }
    }
  }

 private:
  void move_on_core(UnitContext& ctx, RankId src, RankId dst, TileId t) {
    const ShapeRange rows = map_.range(t);
    if (src != dst) {
      for (const auto& tensor : full_) {
        if (cfg_.mode == TransferMode::pull) {
          const std::vector<T> data = tile_pull_data(ctx, tensor, map_, t);
          ctx.write_rows(tensor, dst, rows, std::span<const T>(data));
        } else {
          tile_push_data(ctx, tensor, toward(map_, dst), t, ctx.read_rows(tensor, src, rows));
        }
      }
    }
    ctx.producer_tile_notify(toward(map_, dst), t, NotifyMode::p2p, set_);
  }

  KernelConfig cfg_;
  StaticMapping map_;
  std::vector<SymmetricTensor<T>> full_;
  std::size_t set_;
  RankTasks tasks_;
};

// Reduce-scatter of per-rank partials [rows, cols] into per-rank shards of
// rows_per_rank rows. Partial tiles become readable when the producer's
// notifications on `layout` channels in `prod_set` complete.
//
// ring order: R-1 steps; rank q adds the incoming partial of chunk
// (q+s+1) mod R to its own and forwards it to rank q-1; at the last step
// it finishes its own chunk. all2all order: every rank sends its raw
// partial of chunk c to owner c, which sums all R contributions in
// ascending rank order.
//
// Reductions run on communication workers; only movement is bound to the
// copy engine.
template <class T>
class ReduceScatterStage {
 public:
  ReduceScatterStage(World& w, const KernelConfig& cfg, StaticMapping layout, SymmetricTensor<T> partial,
                     std::size_t prod_set)
      : cfg_(cfg),
        layout_(std::move(layout)),
        partial_(std::move(partial)),
        prod_set_(prod_set),
        tasks_(cfg.world_size) {
    layout_.require_block_aligned();
    const std::size_t cols = partial_.row_elems();
    const std::size_t rows = layout_.rows();
    const std::size_t per_rank = layout_.rows_per_rank();
    out_ = w.alloc_symmetric<T>({per_rank, cols});
    if (cfg_.order == TileOrder::ring) {
      recv_ = w.alloc_symmetric<T>({rows, cols});
      stage_ = w.alloc_symmetric<T>({rows, cols});
    } else {
      slab_ = w.alloc_symmetric<T>({per_rank * static_cast<std::size_t>(cfg_.world_size), cols});
    }
  }

  const SymmetricTensor<T>& output() const { return out_; }

  std::size_t peer_slots() const { return 2 * static_cast<std::size_t>(cfg_.world_size) * layout_.num_tiles(); }

  void build() {
    const int R = cfg_.world_size;
    tasks_ = RankTasks(R);
    for (RankId q = 0; q < R; ++q) {
      TaskList& list = tasks_[q];
      if (cfg_.order == TileOrder::ring) {
        for (int s = 0; s < R; ++s) {
          const RankId chunk = (q + s + 1) % R;
          for (TileId t : layout_.tiles_of_rank(chunk)) {
            list.add([this, s, t](UnitContext& ctx) { ring_reduce(ctx, s, t); });
          }
        }
      } else {
        for (RankId c : tile_schedule(TileOrder::all2all, q, R)) {
          if (c == q) continue;
          for (TileId t : layout_.tiles_of_rank(c)) {
            const bool engine = via_copy_engine(cfg_.binding, t);
            if (cfg_.mode == TransferMode::push && engine) continue;
            list.add([this, c, t](UnitContext& ctx) { direct_send(ctx, c, t); });
          }
        }
        for (TileId t : layout_.tiles_of_rank(q)) {
          list.add([this, t](UnitContext& ctx) { direct_reduce(ctx, t); });
        }
      }
    }
  }

  void comm(UnitContext& ctx) { tasks_[ctx.rank()].drain(ctx); }

  void host(UnitContext& ctx) {
    if (cfg_.binding == ResourceBinding::core) return;
    if (cfg_.order == TileOrder::ring) {
      ring_host(ctx);
    } else {
      direct_host(ctx);
    }
  }

 private:
  std::size_t tiles() const { return layout_.num_tiles(); }
  TileId arrival(TileId t) const { return t; }
  TileId ready(TileId t) const { return TileId{tiles() + t.get()}; }
  TileId arrival(RankId s, TileId t) const { return TileId{static_cast<std::size_t>(s) * tiles() + t.get()}; }
  TileId ready(RankId s, TileId t) const {
    return TileId{(static_cast<std::size_t>(cfg_.world_size) + static_cast<std::size_t>(s)) * tiles() + t.get()};
  }
  RankId prev(RankId q) const { return (q - 1 + cfg_.world_size) % cfg_.world_size; }
  RankId next(RankId q) const { return (q + 1) % cfg_.world_size; }

  // Rows of tile t (in chunk c) inside owner c's slab block for source s.
  ShapeRange slab_rows(RankId s, RankId c, TileId t) const {
    const ShapeRange rows = layout_.range(t);
    const std::size_t base = static_cast<std::size_t>(s) * layout_.rows_per_rank();
    const std::size_t off = layout_.rank_rows(c).lo;
    return {base + rows.lo - off, base + rows.hi - off};
  }
  ShiftedTarget slab_target(RankId s, RankId c) const {
    const auto base = static_cast<std::ptrdiff_t>(static_cast<std::size_t>(s) * layout_.rows_per_rank());
    return {&layout_, base - static_cast<std::ptrdiff_t>(layout_.rank_rows(c).lo), c};
  }

  void write_out(UnitContext& ctx, TileId t, std::span<const T> acc) {
    const ShapeRange rows = layout_.range(t);
    const std::size_t off = layout_.rank_rows(ctx.rank()).lo;
    ctx.write_rows(out_, ctx.rank(), ShapeRange{rows.lo - off, rows.hi - off}, acc);
  }

  void ring_reduce(UnitContext& ctx, int step, TileId t) {
    const RankId q = ctx.rank();
    const int R = cfg_.world_size;
    const bool engine = via_copy_engine(cfg_.binding, t);
    const ShapeRange rows = layout_.range(t);
    ctx.consumer_tile_wait(layout_, t, prod_set_);
    ctx.trace(EventKind::tile_start, t.get());
    const auto own = ctx.read_rows(partial_, q, rows);
    std::vector<T> acc(own.begin(), own.end());
    if (step > 0) {
      if (!engine && cfg_.mode == TransferMode::pull) {
        ctx.peer_tile_wait(ready(t), q);
        const std::vector<T> in = tile_pull_data(ctx, stage_, toward(layout_, next(q)), t);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = in[i] + acc[i];
      } else {
        ctx.peer_tile_wait(arrival(t), q);
        const auto in = ctx.read_rows(recv_, q, rows);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = in[i] + acc[i];
      }
    }
    ctx.trace(EventKind::tile_end, t.get());
    if (step == R - 1) {
      write_out(ctx, t, acc);
      return;
    }
    if (!engine && cfg_.mode == TransferMode::push) {
      tile_push_data(ctx, recv_, toward(layout_, prev(q)), t, std::span<const T>(acc));
      ctx.peer_tile_notify(arrival(t), prev(q));
      return;
    }
    ctx.write_rows(stage_, q, rows, std::span<const T>(acc));
    // Core pull and engine pull: the mover is rank q-1. Engine push: the mover is q's host.
    const bool own_host = engine && cfg_.mode == TransferMode::push;
    ctx.peer_tile_notify(ready(t), own_host ? q : prev(q));
  }

  void ring_host(UnitContext& ctx) {
    const RankId q = ctx.rank();
    const int R = cfg_.world_size;
    for (int s = 0; s < R; ++s) {
      const RankId chunk = (q + s + 1) % R;
      for (TileId t : layout_.tiles_of_rank(chunk)) {
        if (!via_copy_engine(cfg_.binding, t)) continue;
        const ShapeRange rows = layout_.range(t);
        if (cfg_.mode == TransferMode::push) {
          if (s > 0) {
            ctx.rank_wait(next(q));
            ctx.peer_tile_notify(arrival(t), q);
          }
          if (s < R - 1) {
            ctx.peer_tile_wait(ready(t), q);
            rank_copy_data(ctx, TensorSlice<T>{stage_, q, rows}, TensorSlice<T>{recv_, prev(q), rows}, t);
          }
        } else if (s > 0) {
          ctx.peer_tile_wait(ready(t), q);
          rank_copy_data(ctx, TensorSlice<T>{stage_, next(q), rows}, TensorSlice<T>{recv_, q, rows}, t);
          ctx.rank_wait(q);
          ctx.peer_tile_notify(arrival(t), q);
        }
      }
    }
  }

  // Sender side for owner c (core push, or announcing readiness for pulls).
  void direct_send(UnitContext& ctx, RankId c, TileId t) {
    const RankId s = ctx.rank();
    ctx.consumer_tile_wait(layout_, t, prod_set_);
    const bool engine = via_copy_engine(cfg_.binding, t);
    if (cfg_.mode == TransferMode::push && !engine) {
      tile_push_data(ctx, slab_, slab_target(s, c), t, ctx.read_rows(partial_, s, layout_.range(t)));
      ctx.peer_tile_notify(arrival(s, t), c);
    } else {
      ctx.peer_tile_notify(ready(s, t), c);
    }
  }

  void direct_reduce(UnitContext& ctx, TileId t) {
    const RankId q = ctx.rank();
    const int R = cfg_.world_size;
    const bool engine = via_copy_engine(cfg_.binding, t);
    const ShapeRange rows = layout_.range(t);
    ctx.consumer_tile_wait(layout_, t, prod_set_);
    std::vector<std::vector<T>> parts(static_cast<std::size_t>(R));
    for (RankId s : tile_schedule(TileOrder::all2all, q, R)) {
      if (s == q) {
        const auto own = ctx.read_rows(partial_, q, rows);
        parts[s].assign(own.begin(), own.end());
      } else if (!engine && cfg_.mode == TransferMode::pull) {
        ctx.peer_tile_wait(ready(s, t), q);
        parts[s] = tile_pull_data(ctx, partial_, toward(layout_, s), t);
      } else {
        ctx.peer_tile_wait(arrival(s, t), q);
        const auto in = ctx.read_rows(slab_, q, slab_rows(s, q, t));
        parts[s].assign(in.begin(), in.end());
      }
    }
    ctx.trace(EventKind::tile_start, t.get());
    std::vector<T> acc = parts[0];
    for (int s = 1; s < R; ++s) {
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += parts[s][i];
    }
    ctx.trace(EventKind::tile_end, t.get());
    write_out(ctx, t, acc);
  }

  void direct_host(UnitContext& ctx) {
    const RankId q = ctx.rank();
    const int R = cfg_.world_size;
    const auto sched = tile_schedule(TileOrder::all2all, q, R);
    if (cfg_.mode == TransferMode::push) {
      for (RankId c : sched) {
        if (c == q) continue;
        for (TileId t : layout_.tiles_of_rank(c)) {
          if (!via_copy_engine(cfg_.binding, t)) continue;
          ctx.consumer_tile_wait(layout_, t, prod_set_);
          rank_copy_data(ctx, TensorSlice<T>{partial_, q, layout_.range(t)},
                         TensorSlice<T>{slab_, c, slab_rows(q, c, t)}, t);
        }
      }
      for (RankId s : sched) {
        if (s == q) continue;
        for (TileId t : layout_.tiles_of_rank(q)) {
          if (!via_copy_engine(cfg_.binding, t)) continue;
          ctx.rank_wait(s);
          ctx.peer_tile_notify(arrival(s, t), q);
        }
      }
    } else {
      for (RankId s : sched) {
        if (s == q) continue;
        for (TileId t : layout_.tiles_of_rank(q)) {
          if (!via_copy_engine(cfg_.binding, t)) continue;
          ctx.peer_tile_wait(ready(s, t), q);
          rank_copy_data(ctx, TensorSlice<T>{partial_, s, layout_.range(t)},
                         TensorSlice<T>{slab_, q, slab_rows(s, q, t)}, t);
          ctx.rank_wait(q);
          ctx.peer_tile_notify(arrival(s, t), q);
        }
      }
    }
  }

  KernelConfig cfg_;
  StaticMapping layout_;
  SymmetricTensor<T> partial_;
  std::size_t prod_set_;
  SymmetricTensor<T> out_;
  SymmetricTensor<T> recv_;
  SymmetricTensor<T> stage_;
  SymmetricTensor<T> slab_;
  RankTasks tasks_;
};

}  // namespace tilelink
