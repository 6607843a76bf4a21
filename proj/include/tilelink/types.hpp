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

#include <compare>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "tilelink/errors.hpp"

namespace tilelink {

using RankId = int;

// Index type that does not silently convert to or from other indices.
template <class Tag>
struct StrongIndex {
  std::size_t value = 0;

  constexpr StrongIndex() = default;
  constexpr explicit StrongIndex(std::size_t v) : value(v) {}

  constexpr std::size_t get() const { return value; }
  friend constexpr auto operator<=>(StrongIndex, StrongIndex) = default;
};

using TileId = StrongIndex<struct TileTag>;
using ChannelId = StrongIndex<struct ChannelTag>;

// Half-open row interval [lo, hi). All layouts here are row-sharded, so a
// shape range only needs the leading dimension.
struct ShapeRange {
  std::size_t lo = 0;
  std::size_t hi = 0;

  constexpr std::size_t size() const { return hi - lo; }
  constexpr bool contains(std::size_t row) const { return row >= lo && row < hi; }
  constexpr bool overlaps(const ShapeRange& o) const { return lo < o.hi && o.lo < hi; }
  friend constexpr bool operator==(const ShapeRange&, const ShapeRange&) = default;
};

enum class NotifyMode { p2p, broadcast };
enum class TransferMode { push, pull };
enum class ResourceBinding { core, copy_engine, hybrid };
enum class TileOrder { ring, all2all };
enum class Unit { host, compute, copy };

constexpr std::string_view to_string(NotifyMode m) {
  return m == NotifyMode::p2p ? "p2p" : "broadcast";
}
constexpr std::string_view to_string(TransferMode m) {
  return m == TransferMode::push ? "push" : "pull";
}
constexpr std::string_view to_string(TileOrder o) {
  return o == TileOrder::ring ? "ring" : "all2all";
}
constexpr std::string_view to_string(ResourceBinding b) {
  switch (b) {
    case ResourceBinding::core: return "core";
    case ResourceBinding::copy_engine: return "copy_engine";
    case ResourceBinding::hybrid: return "hybrid";
  }
  return "?";
}
constexpr std::string_view to_string(Unit u) {
  switch (u) {
    case Unit::host: return "host";
    case Unit::compute: return "compute";
    case Unit::copy: return "copy";
  }
  return "?";
}

inline TransferMode parse_transfer_mode(std::string_view s) {
  if (s == "push") return TransferMode::push;
  if (s == "pull") return TransferMode::pull;
  throw ConfigError("unknown transfer mode '" + std::string(s) + "'");
}
inline TileOrder parse_tile_order(std::string_view s) {
  if (s == "ring") return TileOrder::ring;
  if (s == "all2all") return TileOrder::all2all;
  throw ConfigError("unknown tile order '" + std::string(s) + "'");
}
inline ResourceBinding parse_binding(std::string_view s) {
  if (s == "core") return ResourceBinding::core;
  if (s == "copy_engine") return ResourceBinding::copy_engine;
  if (s == "hybrid") return ResourceBinding::hybrid;
  throw ConfigError("unknown resource binding '" + std::string(s) + "'");
}
inline Unit parse_unit(std::string_view s) {
  if (s == "host") return Unit::host;
  if (s == "compute") return Unit::compute;
  if (s == "copy") return Unit::copy;
  throw ConfigError("unknown unit '" + std::string(s) + "'");
}

constexpr std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace tilelink
