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

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tilelink/kernels/common.hpp"
#include "tilelink/kernels/gemm.hpp"

namespace tilelink {

// Sequence-parallel attention operands. Every rank holds seq/R query rows
// and the matching K/V shard; rows are heads x head_dim wide.
template <class T>
struct AttentionInputs {
  std::vector<std::vector<T>> q;
  std::vector<std::vector<T>> k;
  std::vector<std::vector<T>> v;
};

// AllGather of the KV cache overlapped with non-causal attention of the
// local queries against the full sequence. Each compute tile (query rows x
// one head) streams over KV blocks of tn_comp rows in schedule order with
// an online softmax, waiting only for the block it is about to read.
template <class T>
class AgKvAttention {
 public:
  AgKvAttention(World& w, KernelConfig cfg)
      : w_(w), cfg_(std::move(cfg)), map_(cfg_.seq, cfg_.world_size, cfg_.channels, cfg_.tm_comm) {
    if (cfg_.kind != KernelKind::ag_kv_attention) throw ConfigError("AgKvAttention needs kind ag_kv_attention");
    cfg_.validate();
    check_world(w_, cfg_);
    width_ = cfg_.heads * cfg_.head_dim;
    local_ = cfg_.seq / static_cast<std::size_t>(cfg_.world_size);
    q_ = w_.alloc_symmetric<T>({local_, width_});
    k_ = w_.alloc_symmetric<T>({cfg_.seq, width_});
    v_ = w_.alloc_symmetric<T>({cfg_.seq, width_});
    o_ = w_.alloc_symmetric<T>({local_, width_});
  }

  const StaticMapping& mapping() const { return map_; }

  KernelRun<T> run(const AttentionInputs<T>& in, ExecMode mode = ExecMode::full) {
    const int R = cfg_.world_size;
    check_inputs(in);
    w_.begin_epoch(1, 0);
    for (RankId r = 0; r < R; ++r) {
      q_.upload(r, in.q[r]);
      for (RankId s = 0; s < R; ++s) {
        if (s != r && mode != ExecMode::compute_only) continue;
        k_.upload(r, in.k[s], map_.rank_rows(s).lo);
        v_.upload(r, in.v[s], map_.rank_rows(s).lo);
      }
    }

    AllGatherStage<T> ag(cfg_, map_, {k_, v_}, 0);
    if (mode != ExecMode::compute_only) {
      ag.expect(w_);
      ag.build();
    }

    // KV blocks never straddle a rank's rows.
    std::vector<std::vector<ShapeRange>> blocks(static_cast<std::size_t>(R));
    ListMapping kv;
    for (RankId s = 0; s < R; ++s) {
      const ShapeRange rows = map_.rank_rows(s);
      for (std::size_t lo = rows.lo; lo < rows.hi; lo += cfg_.tn_comp) {
        const ShapeRange b{lo, std::min(rows.hi, lo + cfg_.tn_comp)};
        blocks[s].push_back(b);
        kv.ranges.push_back(b);
        kv.ranks.push_back(s);
        kv.deps.push_back(map_.channels_for_rows(b));
      }
    }
    std::vector<std::size_t> first_block(static_cast<std::size_t>(R), 0);
    for (RankId s = 1; s < R; ++s) first_block[s] = first_block[s - 1] + blocks[s - 1].size();

    RankTasks compute(R);
    for (RankId r = 0; r < R; ++r) {
      std::vector<TileId> order;
      for (RankId s : tile_schedule(cfg_.order, r, R)) {
        for (std::size_t b = 0; b < blocks[s].size(); ++b) order.push_back(TileId{first_block[s] + b});
      }
      for (std::size_t lo = 0; lo < local_; lo += cfg_.tm_comp) {
        const ShapeRange qrows{lo, std::min(local_, lo + cfg_.tm_comp)};
        for (std::size_t h = 0; h < cfg_.heads; ++h) {
          compute[r].add([this, &kv, order, qrows, h, mode](UnitContext& ctx) {
            attention_tile(ctx, kv, order, qrows, h, mode);
          });
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
    for (RankId r = 0; r < R; ++r) out.out.push_back(o_.download(r));
    return out;
  }

 private:
  void check_inputs(const AttentionInputs<T>& in) const {
    const auto R = static_cast<std::size_t>(cfg_.world_size);
    for (const auto* v : {&in.q, &in.k, &in.v}) {
      if (v->size() != R) throw DomainError("attention: expected one Q, K and V shard per rank");
      for (const auto& b : *v) {
        if (b.size() != local_ * width_) throw DomainError("attention: shard has the wrong size");
      }
    }
  }

  void attention_tile(UnitContext& ctx, const ListMapping& kv, const std::vector<TileId>& order, ShapeRange qrows,
                      std::size_t head, ExecMode mode) {
    const RankId r = ctx.rank();
    const std::size_t hd = cfg_.head_dim;
    const std::size_t col = head * hd;
    const std::size_t nq = qrows.size();
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    std::vector<T> m(nq, -std::numeric_limits<T>::infinity());
    std::vector<T> l(nq, T{});
    std::vector<T> acc(nq * hd, T{});
    std::vector<T> s;
    const auto q = ctx.read_rows(q_, r, qrows);
    ctx.trace(EventKind::tile_start, qrows.lo / cfg_.tm_comp);
    for (TileId b : order) {
      ctx.consumer_tile_wait(kv, b, 0);
      if (mode == ExecMode::comm_only) continue;
      const ShapeRange rows = kv.range(b);
      const auto k = ctx.read_rows(k_, r, rows);
      const auto v = ctx.read_rows(v_, r, rows);
      s.assign(rows.size(), T{});
      for (std::size_t i = 0; i < nq; ++i) {
        const T* qi = q.data() + i * width_ + col;
        T block_max = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < rows.size(); ++j) {
          const T* kj = k.data() + j * width_ + col;
          T dot{};
          for (std::size_t d = 0; d < hd; ++d) dot += qi[d] * kj[d];
          s[j] = dot * scale;
          block_max = std::max(block_max, s[j]);
        }
        const T m_new = std::max(m[i], block_max);
        const T correction = std::exp(m[i] - m_new);
        T* ai = acc.data() + i * hd;
        l[i] *= correction;
        for (std::size_t d = 0; d < hd; ++d) ai[d] *= correction;
        for (std::size_t j = 0; j < rows.size(); ++j) {
          const T p = std::exp(s[j] - m_new);
          l[i] += p;
          const T* vj = v.data() + j * width_ + col;
          for (std::size_t d = 0; d < hd; ++d) ai[d] += p * vj[d];
        }
        m[i] = m_new;
      }
    }
    if (mode != ExecMode::comm_only) {
      for (std::size_t i = 0; i < nq; ++i) {
        for (std::size_t d = 0; d < hd; ++d) acc[i * hd + d] /= l[i];
      }
      ctx.write_block(o_, r, qrows, col, hd, std::span<const T>(acc));
    }
    ctx.trace(EventKind::tile_end, qrows.lo / cfg_.tm_comp);
  }

  World& w_;
  KernelConfig cfg_;
  StaticMapping map_;
  std::size_t width_ = 0;
  std::size_t local_ = 0;
  SymmetricTensor<T> q_, k_, v_, o_;
};

}  // namespace tilelink
