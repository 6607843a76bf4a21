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

#include <span>
#include <string>
#include <vector>

#include "tilelink/mapping.hpp"
#include "tilelink/runtime.hpp"

namespace tilelink {

// Writes a tile held by the caller into remote buffers at range f_S(t):
// on rank f_R(t) for p2p, on every rank (the caller's included) for
// broadcast. Runs on the caller's core; completes before it returns.
template <class T, TileMapping M>
void tile_push_data(UnitContext& ctx, const SymmetricTensor<T>& tensor, const M& m, TileId t,
                    std::span<const T> data, NotifyMode mode = NotifyMode::p2p) {
  const ShapeRange rows = m.range(t);
  if (data.size() != rows.size() * tensor.row_elems()) {
    throw DomainError("tile_push_data: tile " + std::to_string(t.get()) + " holds " + std::to_string(data.size()) +
                      " elements, mapping expects " + std::to_string(rows.size() * tensor.row_elems()));
  }
  ctx.trace(EventKind::copy_start, t.get());
  ctx.comm_delay();
  if (mode == NotifyMode::p2p) {
    ctx.write_rows(tensor, m.rank(t), rows, data);
  } else {
    for (RankId r = 0; r < ctx.world().world_size(); ++r) ctx.write_rows(tensor, r, rows, data);
  }
  ctx.trace(EventKind::copy_end, t.get());
}

// Reads range f_S(t) from rank f_R(t) (p2p), or that range from every rank
// concatenated in ascending rank order (broadcast).
template <class T, TileMapping M>
std::vector<T> tile_pull_data(UnitContext& ctx, const SymmetricTensor<T>& tensor, const M& m, TileId t,
                              NotifyMode mode = NotifyMode::p2p) {
  const ShapeRange rows = m.range(t);
  ctx.trace(EventKind::copy_start, t.get());
  ctx.comm_delay();
  std::vector<T> out;
  if (mode == NotifyMode::p2p) {
    const auto src = ctx.read_rows(tensor, m.rank(t), rows);
    out.assign(src.begin(), src.end());
  } else {
    out.reserve(rows.size() * tensor.row_elems() * static_cast<std::size_t>(ctx.world().world_size()));
    for (RankId r = 0; r < ctx.world().world_size(); ++r) {
      const auto src = ctx.read_rows(tensor, r, rows);
      out.insert(out.end(), src.begin(), src.end());
    }
  }
  ctx.trace(EventKind::copy_end, t.get());
  return out;
}

template <class T>
struct TensorSlice {
  SymmetricTensor<T> tensor;
  RankId rank = 0;
  ShapeRange rows;
};

// Enqueues a copy on the issuing rank's copy engine. Direction follows the
// argument order: a remote src is a pull, a remote dst a push. When the
// bytes have landed the engine fires rank_notify(t, dst.rank) on behalf of
// the issuing rank; completions of one engine are in issue order.
template <class T>
void rank_copy_data(UnitContext& host, const TensorSlice<T>& src, const TensorSlice<T>& dst, TileId t) {
  if (host.unit() != Unit::host) throw ConfigError("rank_copy_data must be issued from a host context");
  host.world().check_rank(src.rank);
  host.world().check_rank(dst.rank);
  const std::size_t n_src = src.rows.size() * src.tensor.row_elems();
  const std::size_t n_dst = dst.rows.size() * dst.tensor.row_elems();
  if (n_src != n_dst) {
    throw DomainError("rank_copy_data: source has " + std::to_string(n_src) + " elements, destination " +
                      std::to_string(n_dst));
  }
  if (src.tensor.id() == dst.tensor.id() && src.rank == dst.rank && src.rows.overlaps(dst.rows)) {
    throw DomainError("rank_copy_data: overlapping source and destination ranges");
  }
  if (src.rows.hi > src.tensor.rows() || dst.rows.hi > dst.tensor.rows()) {
    throw DomainError("rank_copy_data: range outside tensor");
  }
  host.world().copy_engine(host.rank()).submit([src, dst, t](UnitContext& engine) {
    engine.trace(EventKind::copy_start, t.get());
    engine.comm_delay();
    const auto from = engine.read_rows(src.tensor, src.rank, src.rows);
    const std::vector<T> staged(from.begin(), from.end());
    engine.write_rows(dst.tensor, dst.rank, dst.rows, std::span<const T>(staged));
    engine.trace(EventKind::copy_end, t.get());
    engine.rank_notify(t, dst.rank);
  });
}

}  // namespace tilelink
