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

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tilelink/kernels/common.hpp"

namespace tilelink {

// Producer/consumer checksum kernel for memory-consistency stress. Every
// rank produces the tiles of its row block for rank r+1, which checks each
// tile element by element right after its consumer wait returns.
struct ChecksumConfig {
  int world_size = 2;
  int channels = 1;
  std::size_t tiles_per_channel = 2;
  std::size_t tile_rows = 2;
  std::size_t width = 8;
  TransferMode mode = TransferMode::push;
  int producers = 1;
  int consumers = 1;
};

struct ChecksumResult {
  std::size_t tiles_checked = 0;
  std::size_t torn_reads = 0;
  std::vector<std::string> violations;
};

inline float checksum_value(std::uint64_t salt, std::size_t row, std::size_t col) {
  return static_cast<float>((salt * 31 + row * 7 + col * 13) % 1000 + 1);
}

// Runs one epoch of the kernel on `w`. Race-checker violations are
// reported, not thrown.
inline ChecksumResult run_checksum(World& w, const ChecksumConfig& c, std::uint64_t salt) {
  const int R = c.world_size;
  if (w.world_size() != R || w.channels_per_rank() != c.channels) {
    throw ConfigError("checksum config does not match the world");
  }
  const std::size_t rows = static_cast<std::size_t>(R) * static_cast<std::size_t>(c.channels) *
                           c.tiles_per_channel * c.tile_rows;
  const StaticMapping map(rows, R, c.channels, c.tile_rows);
  auto buf = w.alloc_symmetric<float>({rows, c.width});
  w.begin_epoch(1, 0);
  for (RankId dst = 0; dst < R; ++dst) {
    const RankId src = (dst - 1 + R) % R;
    for (TileId t : map.tiles_of_rank(src)) w.expect_arrivals(dst, 0, map.channel(t), 1);
  }

  RankTasks produce(R), consume(R);
  std::atomic<std::size_t> checked{0}, torn{0};
  for (RankId r = 0; r < R; ++r) {
    const RankId dst = (r + 1) % R;
    for (TileId t : map.tiles_of_rank(r)) {
      produce[r].add([&, dst, t](UnitContext& ctx) {
        const ShapeRange span = map.range(t);
        std::vector<float> data(span.size() * c.width);
        for (std::size_t i = 0; i < span.size(); ++i) {
          for (std::size_t j = 0; j < c.width; ++j) data[i * c.width + j] = checksum_value(salt, span.lo + i, j);
        }
        if (c.mode == TransferMode::push) {
          tile_push_data(ctx, buf, toward(map, dst), t, std::span<const float>(data));
        } else {
          ctx.write_rows(buf, ctx.rank(), span, std::span<const float>(data));
        }
        ctx.producer_tile_notify(toward(map, dst), t, NotifyMode::p2p);
      });
    }
    const RankId src = (r - 1 + R) % R;
    for (TileId t : map.tiles_of_rank(src)) {
      consume[r].add([&, t](UnitContext& ctx) {
        ctx.consumer_tile_wait(map, t);
        const ShapeRange span = map.range(t);
        std::vector<float> got;
        if (c.mode == TransferMode::push) {
          const auto v = ctx.read_rows(buf, ctx.rank(), span);
          got.assign(v.begin(), v.end());
        } else {
          got = tile_pull_data(ctx, buf, map, t);
        }
        bool ok = true;
        for (std::size_t i = 0; i < span.size(); ++i) {
          for (std::size_t j = 0; j < c.width; ++j) ok = ok && got[i * c.width + j] == checksum_value(salt, span.lo + i, j);
        }
        ++checked;
        if (!ok) ++torn;
      });
    }
  }

  World::Program p;
  p.compute = [&](UnitContext& ctx) { produce[ctx.rank()].drain(ctx); };
  p.compute_workers = c.producers;
  p.comm = [&](UnitContext& ctx) { consume[ctx.rank()].drain(ctx); };
  p.comm_workers = c.consumers;
  ChecksumResult res;
  try {
    w.run(p);
  } catch (const RaceViolation&) {
  }
  res.tiles_checked = checked.load();
  res.torn_reads = torn.load();
  res.violations = w.race_violations();
  return res;
}

}  // namespace tilelink
