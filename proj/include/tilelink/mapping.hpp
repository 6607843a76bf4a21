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
#include <concepts>
#include <cstddef>
#include <limits>
#include <string>
#include <tuple>
#include <vector>

#include "tilelink/errors.hpp"
#include "tilelink/types.hpp"

namespace tilelink {

using ChannelList = std::vector<ChannelId>;

// Anything that resolves a tile to its rows, its rank and the barrier
// channels it signals on. Channel IDs are global, in [0, R*C).
template <class M>
concept TileMapping = requires(const M& m, TileId t) {
  { m.num_tiles() } -> std::convertible_to<std::size_t>;
  { m.range(t) } -> std::convertible_to<ShapeRange>;
  { m.rank(t) } -> std::convertible_to<RankId>;
  { m.channels(t) } -> std::convertible_to<ChannelList>;
};

// Affine tile -> (rows, source rank, channel) mapping for a tensor sharded
// by rows over R ranks with C barrier channels per rank.
class StaticMapping {
 public:
  StaticMapping(std::size_t rows, int world, int channels, std::size_t tile_rows,
                std::size_t tile_cols = 1)
      : rows_(rows), world_(world), channels_(channels), tile_rows_(tile_rows), tile_cols_(tile_cols) {
    if (rows_ == 0) throw ConfigError("static mapping: row extent must be >= 1");
    if (world_ < 1) throw ConfigError("static mapping: world size must be >= 1");
    if (channels_ < 1) throw ConfigError("static mapping: channels per rank must be >= 1");
    if (tile_rows_ < 1 || tile_cols_ < 1) throw ConfigError("static mapping: tile extents must be >= 1");
    rows_per_rank_ = ceil_div(rows_, static_cast<std::size_t>(world_));
    rows_per_channel_ = ceil_div(rows_, static_cast<std::size_t>(world_) * channels_);
    if (tile_rows_ > rows_per_rank_) {
      throw ConfigError("static mapping: tile rows " + std::to_string(tile_rows_) + " exceed rows per rank " +
                        std::to_string(rows_per_rank_));
    }
    if (tile_rows_ > rows_per_channel_) {
      throw ConfigError("static mapping: tile rows " + std::to_string(tile_rows_) +
                        " exceed rows per channel " + std::to_string(rows_per_channel_));
    }
  }

  std::size_t rows() const { return rows_; }
  int world_size() const { return world_; }
  int channels_per_rank() const { return channels_; }
  std::size_t tile_rows() const { return tile_rows_; }
  std::size_t tile_cols() const { return tile_cols_; }
  std::size_t rows_per_rank() const { return rows_per_rank_; }
  std::size_t rows_per_channel() const { return rows_per_channel_; }
  std::size_t num_tiles() const { return ceil_div(rows_, tile_rows_); }
  std::size_t num_channels() const { return static_cast<std::size_t>(world_) * channels_; }
  std::size_t tiles_per_rank() const { return rows_per_rank_ / tile_rows_; }
  std::size_t tiles_per_channel() const { return rows_per_channel_ / tile_rows_; }

  // True when tiles never straddle a channel and channels never straddle a
  // rank block. The kernels require this; the bare formulas do not.
  bool block_aligned() const {
    return rows_per_channel_ % tile_rows_ == 0 && rows_per_channel_ * channels_ == rows_per_rank_;
  }

  void require_block_aligned() const {
    if (!block_aligned()) {
      throw ConfigError("static mapping not block aligned: rows=" + std::to_string(rows_) +
                        " world=" + std::to_string(world_) + " channels=" + std::to_string(channels_) +
                        " tile_rows=" + std::to_string(tile_rows_) + " (need tile_rows | rows_per_channel and " +
                        "channels * rows_per_channel == rows_per_rank)");
    }
  }

  ShapeRange range(TileId t) const;
  RankId rank(TileId t) const;
  ChannelList channels(TileId t) const;
  ChannelId channel(TileId t) const;

  ShapeRange rank_rows(RankId r) const {
    const std::size_t lo = std::min(rows_, static_cast<std::size_t>(r) * rows_per_rank_);
    return {lo, std::min(rows_, lo + rows_per_rank_)};
  }
  ShapeRange channel_rows(ChannelId c) const {
    const std::size_t lo = std::min(rows_, c.get() * rows_per_channel_);
    return {lo, std::min(rows_, lo + rows_per_channel_)};
  }
  ChannelId channel_of_row(std::size_t row) const { return ChannelId{row / rows_per_channel_}; }
  RankId rank_of_row(std::size_t row) const { return static_cast<RankId>(row / rows_per_rank_); }

  // Channels whose rows intersect [rows.lo, rows.hi).
  ChannelList channels_for_rows(ShapeRange rows) const {
    ChannelList out;
    if (rows.size() == 0) return out;
    for (std::size_t c = rows.lo / rows_per_channel_; c <= (rows.hi - 1) / rows_per_channel_; ++c) {
      out.emplace_back(c);
    }
    return out;
  }

  std::vector<TileId> tiles_of_rank(RankId r) const {
    std::vector<TileId> out;
    const ShapeRange owned = rank_rows(r);
    for (std::size_t t = owned.lo / tile_rows_; t * tile_rows_ < owned.hi; ++t) out.emplace_back(t);
    return out;
  }

  friend bool operator==(const StaticMapping&, const StaticMapping&) = default;

 private:
  std::size_t rows_;
  int world_;
  int channels_;
  std::size_t tile_rows_;
  std::size_t tile_cols_;
  std::size_t rows_per_rank_ = 0;
  std::size_t rows_per_channel_ = 0;
};

// rows [t*Tm, min(t*Tm + Tm, M)); the final tile is clamped to the extent.
inline ShapeRange static_shape_range(TileId t, const StaticMapping& m) {
  const std::size_t lo = t.get() * m.tile_rows();
  if (lo >= m.rows()) {
    throw DomainError("tile " + std::to_string(t.get()) + " outside grid of " + std::to_string(m.num_tiles()) +
                      " tiles");
  }
  return {lo, std::min(lo + m.tile_rows(), m.rows())};
}

// floor(t / floor(M_per_rank / Tm))
inline RankId static_src_rank(TileId t, const StaticMapping& m) {
  static_cast<void>(static_shape_range(t, m));
  const std::size_t per_rank = m.rows_per_rank() / m.tile_rows();
  if (per_rank == 0) throw ConfigError("static mapping: fewer than one tile per rank");
  return static_cast<RankId>(t.get() / per_rank);
}

// floor(t / floor(M_per_channel / Tm)), a global channel in [0, R*C).
inline ChannelId static_channel(TileId t, const StaticMapping& m) {
  static_cast<void>(static_shape_range(t, m));
  const std::size_t per_channel = m.rows_per_channel() / m.tile_rows();
  if (per_channel == 0) throw ConfigError("static mapping: fewer than one tile per channel");
  return ChannelId{t.get() / per_channel};
}

inline ShapeRange StaticMapping::range(TileId t) const { return static_shape_range(t, *this); }
inline RankId StaticMapping::rank(TileId t) const { return static_src_rank(t, *this); }
inline ChannelId StaticMapping::channel(TileId t) const { return static_channel(t, *this); }
inline ChannelList StaticMapping::channels(TileId t) const { return {static_channel(t, *this)}; }

// Owner rank and local slot of a global channel.
inline std::pair<RankId, int> split_channel(ChannelId c, int channels_per_rank) {
  return {static_cast<RankId>(c.get() / channels_per_rank), static_cast<int>(c.get() % channels_per_rank)};
}

// Compute-side row tiling over a tensor whose barriers follow `layout`.
// Tile size is independent of the layout's communication tile size; a tile
// waits on (or notifies) every channel its rows touch.
class RowTiles {
 public:
  RowTiles(const StaticMapping& layout, std::size_t tile_rows) : layout_(layout), tile_rows_(tile_rows) {
    if (tile_rows_ < 1) throw ConfigError("row tiles: tile rows must be >= 1");
  }

  std::size_t num_tiles() const { return ceil_div(layout_.rows(), tile_rows_); }
  std::size_t tile_rows() const { return tile_rows_; }
  ShapeRange range(TileId t) const {
    const std::size_t lo = t.get() * tile_rows_;
    if (lo >= layout_.rows()) throw DomainError("row tile " + std::to_string(t.get()) + " outside grid");
    return {lo, std::min(lo + tile_rows_, layout_.rows())};
  }
  RankId rank(TileId t) const { return layout_.rank_of_row(range(t).lo); }
  ChannelList channels(TileId t) const { return layout_.channels_for_rows(range(t)); }

 private:
  StaticMapping layout_;
  std::size_t tile_rows_;
};

// Re-targets p2p signals and transfers of another mapping at a fixed rank.
template <TileMapping M>
class Targeted {
 public:
  Targeted(const M& base, RankId target) : base_(&base), target_(target) {}
  std::size_t num_tiles() const { return base_->num_tiles(); }
  ShapeRange range(TileId t) const { return base_->range(t); }
  RankId rank(TileId) const { return target_; }
  ChannelList channels(TileId t) const { return base_->channels(t); }

 private:
  const M* base_;
  RankId target_;
};

template <TileMapping M>
Targeted<M> toward(const M& base, RankId target) {
  return Targeted<M>(base, target);
}

// Explicit per-tile tables; used where a tile's dependencies are not affine.
struct ListMapping {
  std::vector<ShapeRange> ranges;
  std::vector<RankId> ranks;
  std::vector<ChannelList> deps;

  std::size_t num_tiles() const { return ranges.size(); }
  ShapeRange range(TileId t) const { return ranges.at(t.get()); }
  RankId rank(TileId t) const { return ranks.at(t.get()); }
  ChannelList channels(TileId t) const { return deps.at(t.get()); }
};

// Per-token expert choices for a whole MoE batch.
struct RoutingTable {
  std::vector<int> topk_ids;  // num_tokens x topk, row-major
  int num_experts = 0;
  int topk = 0;
  std::size_t tokens_per_rank = 0;

  std::size_t num_tokens() const { return topk > 0 ? topk_ids.size() / static_cast<std::size_t>(topk) : 0; }
  int expert(std::size_t token, int slot) const { return topk_ids[token * topk + slot]; }
  RankId source_rank(std::size_t token) const { return static_cast<RankId>(token / tokens_per_rank); }

  void validate(int world) const {
    if (num_experts < 1) throw ConfigError("routing: num_experts must be >= 1");
    if (topk < 1 || topk > num_experts) throw ConfigError("routing: topk must be in [1, num_experts]");
    if (topk_ids.size() % static_cast<std::size_t>(topk) != 0) {
      throw ConfigError("routing: topk_ids length is not a multiple of topk");
    }
    if (!topk_ids.empty() && tokens_per_rank == 0) throw ConfigError("routing: tokens_per_rank must be >= 1");
    if (tokens_per_rank > 0 && ceil_div(num_tokens(), tokens_per_rank) > static_cast<std::size_t>(world)) {
      throw ConfigError("routing: more token shards than ranks");
    }
    for (std::size_t tok = 0; tok < num_tokens(); ++tok) {
      for (int s = 0; s < topk; ++s) {
        const int e = expert(tok, s);
        if (e < 0 || e >= num_experts) {
          throw DomainError("routing: token " + std::to_string(tok) + " routed to expert " + std::to_string(e) +
                            " outside [0, " + std::to_string(num_experts) + ")");
        }
        for (int p = 0; p < s; ++p) {
          if (expert(tok, p) == e) throw ConfigError("routing: token " + std::to_string(tok) + " repeats an expert");
        }
      }
    }
  }
};

struct DynamicEntry {
  ShapeRange range;
  RankId rank;
  ChannelId channel;
};

// Lookup tables filled at runtime. Entries start as a sentinel and reading
// one before it is filled is an error.
class DynamicMapping {
 public:
  static constexpr std::size_t kUnfilled = std::numeric_limits<std::size_t>::max();

  DynamicMapping() = default;
  DynamicMapping(std::size_t num_tiles, int world, int channels)
      : world_(world),
        channels_(channels),
        row_lo_(num_tiles, kUnfilled),
        row_hi_(num_tiles, kUnfilled),
        rank_(num_tiles, kUnfilled),
        channel_(num_tiles, kUnfilled) {
    if (world < 1 || channels < 1) throw ConfigError("dynamic mapping: world and channels must be >= 1");
  }

  std::size_t num_tiles() const { return row_lo_.size(); }
  int world_size() const { return world_; }
  int channels_per_rank() const { return channels_; }

  bool filled(TileId t) const { return t.get() < num_tiles() && row_lo_[t.get()] != kUnfilled; }

  void fill(TileId t, ShapeRange rows, RankId rank, ChannelId channel) {
    if (t.get() >= num_tiles()) throw DomainError("dynamic mapping: tile outside table");
    if (rows.lo >= rows.hi) throw DomainError("dynamic mapping: empty row span");
    if (rank < 0 || rank >= world_) throw DomainError("dynamic mapping: rank out of range");
    if (channel.get() >= static_cast<std::size_t>(world_) * channels_) {
      throw DomainError("dynamic mapping: channel out of range");
    }
    row_lo_[t.get()] = rows.lo;
    row_hi_[t.get()] = rows.hi;
    rank_[t.get()] = static_cast<std::size_t>(rank);
    channel_[t.get()] = channel.get();
  }

  DynamicEntry lookup(TileId t) const {
    if (!filled(t)) throw MappingError("mapping not materialized for tile " + std::to_string(t.get()));
    return {{row_lo_[t.get()], row_hi_[t.get()]}, static_cast<RankId>(rank_[t.get()]), ChannelId{channel_[t.get()]}};
  }

  ShapeRange range(TileId t) const { return lookup(t).range; }
  RankId rank(TileId t) const { return lookup(t).rank; }
  ChannelList channels(TileId t) const { return {lookup(t).channel}; }

  // Grouped row layout: grouped row i carries (token, slot) routed to expert.
  std::vector<std::size_t> row_token;
  std::vector<int> row_slot;
  std::vector<int> row_expert;
  int topk = 0;

  std::size_t num_rows() const { return row_token.size(); }

  // inverse[token * topk + slot] = grouped row.
  std::vector<std::size_t> inverse_permutation() const {
    std::vector<std::size_t> inv(row_token.size(), kUnfilled);
    for (std::size_t i = 0; i < row_token.size(); ++i) {
      inv[row_token[i] * static_cast<std::size_t>(topk) + static_cast<std::size_t>(row_slot[i])] = i;
    }
    return inv;
  }

  friend bool operator==(const DynamicMapping&, const DynamicMapping&) = default;

 private:
  int world_ = 1;
  int channels_ = 1;
  std::vector<std::size_t> row_lo_;
  std::vector<std::size_t> row_hi_;
  std::vector<std::size_t> rank_;
  std::vector<std::size_t> channel_;
};

inline DynamicEntry dynamic_lookup(TileId t, const DynamicMapping& d) { return d.lookup(t); }

// Groups routed (token, slot) rows by expert, then source rank, then token,
// cuts the grouped sequence into tiles of `tile_rows`, and fills the tables:
// rank = majority source rank of the tile's tokens (ties to the lowest),
// channel = round-robin over the C channels of that rank.
inline DynamicMapping build_dynamic_mapping(const RoutingTable& routing, std::size_t tile_rows, int world,
                                            int channels) {
  if (tile_rows < 1) throw ConfigError("dynamic mapping: tile rows must be >= 1");
  if (world < 1 || channels < 1) throw ConfigError("dynamic mapping: world and channels must be >= 1");
  routing.validate(world);

  struct Routed {
    int expert;
    RankId rank;
    std::size_t token;
    int slot;
  };
  std::vector<Routed> rows;
  rows.reserve(routing.topk_ids.size());
  for (std::size_t tok = 0; tok < routing.num_tokens(); ++tok) {
    for (int s = 0; s < routing.topk; ++s) {
      rows.push_back({routing.expert(tok, s), routing.source_rank(tok), tok, s});
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Routed& a, const Routed& b) {
    return std::tie(a.expert, a.rank, a.token) < std::tie(b.expert, b.rank, b.token);
  });

  const std::size_t num_tiles = ceil_div(rows.size(), tile_rows);
  DynamicMapping out(num_tiles, world, channels);
  out.topk = routing.topk;
  out.row_token.reserve(rows.size());
  for (const Routed& r : rows) {
    out.row_token.push_back(r.token);
    out.row_slot.push_back(r.slot);
    out.row_expert.push_back(r.expert);
  }

  std::vector<std::size_t> tiles_on_rank(static_cast<std::size_t>(world), 0);
  std::vector<std::size_t> votes(static_cast<std::size_t>(world));
  for (std::size_t t = 0; t < num_tiles; ++t) {
    const ShapeRange span{t * tile_rows, std::min(rows.size(), (t + 1) * tile_rows)};
    std::fill(votes.begin(), votes.end(), 0);
    for (std::size_t i = span.lo; i < span.hi; ++i) ++votes[static_cast<std::size_t>(rows[i].rank)];
    // max_element returns the first maximum, which is the lowest rank.
    const auto owner = static_cast<RankId>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    const std::size_t local = tiles_on_rank[static_cast<std::size_t>(owner)]++ % static_cast<std::size_t>(channels);
    out.fill(TileId{t}, span, owner, ChannelId{static_cast<std::size_t>(owner) * channels + local});
  }
  return out;
}

}  // namespace tilelink
