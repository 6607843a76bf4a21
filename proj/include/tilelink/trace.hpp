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
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "tilelink/errors.hpp"
#include "tilelink/types.hpp"

namespace tilelink {

enum class EventKind { tile_start, tile_end, wait_start, wait_end, notify, copy_start, copy_end };

constexpr std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::tile_start: return "tile_start";
    case EventKind::tile_end: return "tile_end";
    case EventKind::wait_start: return "wait_start";
    case EventKind::wait_end: return "wait_end";
    case EventKind::notify: return "notify";
    case EventKind::copy_start: return "copy_start";
    case EventKind::copy_end: return "copy_end";
  }
  return "?";
}

inline EventKind parse_event_kind(std::string_view s) {
  for (auto k : {EventKind::tile_start, EventKind::tile_end, EventKind::wait_start, EventKind::wait_end,
                 EventKind::notify, EventKind::copy_start, EventKind::copy_end}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown trace event kind '" + std::string(s) + "'");
}

// `channel` is a flat slot index on the signal board ([pc | peer | host]).
struct TraceEvent {
  RankId rank = 0;
  Unit unit = Unit::compute;
  EventKind kind = EventKind::notify;
  std::optional<std::size_t> tile;
  std::optional<std::size_t> channel;
  std::int64_t t_ns = 0;

  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

inline nlohmann::json to_json(const TraceEvent& e) {
  nlohmann::json j;
  j["rank"] = e.rank;
  j["unit"] = std::string(to_string(e.unit));
  j["kind"] = std::string(to_string(e.kind));
  j["tile"] = e.tile ? nlohmann::json(*e.tile) : nlohmann::json(nullptr);
  j["channel"] = e.channel ? nlohmann::json(*e.channel) : nlohmann::json(nullptr);
  j["t_ns"] = e.t_ns;
  return j;
}

inline TraceEvent trace_event_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> kFields = {"rank", "unit", "kind", "tile", "channel", "t_ns"};
  if (!j.is_object() || j.size() != kFields.size()) throw ConfigError("trace event: expected exactly 6 fields");
  for (const auto& f : kFields) {
    if (!j.contains(f)) throw ConfigError("trace event: missing field '" + f + "'");
  }
  TraceEvent e;
  e.rank = j.at("rank").get<int>();
  e.unit = parse_unit(j.at("unit").get<std::string>());
  e.kind = parse_event_kind(j.at("kind").get<std::string>());
  if (!j.at("tile").is_null()) e.tile = j.at("tile").get<std::size_t>();
  if (!j.at("channel").is_null()) e.channel = j.at("channel").get<std::size_t>();
  e.t_ns = j.at("t_ns").get<std::int64_t>();
  return e;
}

inline void write_jsonl(std::ostream& os, std::span<const TraceEvent> events) {
  for (const auto& e : events) os << to_json(e).dump() << '\n';
}

inline std::vector<TraceEvent> read_jsonl(std::istream& is) {
  std::vector<TraceEvent> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(trace_event_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

// Single-writer append buffer owned by one execution context.
class TraceBuffer {
 public:
  TraceBuffer(RankId rank, Unit unit) : rank_(rank), unit_(unit) {}

  void record(EventKind kind, std::int64_t t_ns, std::optional<std::size_t> tile = std::nullopt,
              std::optional<std::size_t> channel = std::nullopt) {
    events_.push_back({rank_, unit_, kind, tile, channel, t_ns});
  }
  const std::vector<TraceEvent>& events() const { return events_; }

 private:
  RankId rank_;
  Unit unit_;
  std::vector<TraceEvent> events_;
};

// Hands out one buffer per context and merges them after a run.
class Tracer {
 public:
  using Clock = std::chrono::steady_clock;

  explicit Tracer(bool enabled = false) : enabled_(enabled), origin_(Clock::now()) {}

  bool enabled() const { return enabled_; }
  void set_enabled(bool on) { enabled_ = on; }

  std::int64_t now_ns() const {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - origin_).count();
  }

  // Returns nullptr when tracing is off.
  TraceBuffer* open(RankId rank, Unit unit) {
    if (!enabled_) return nullptr;
    std::lock_guard lock(mu_);
    buffers_.emplace_back(rank, unit);
    return &buffers_.back();
  }

  void clear() {
    std::lock_guard lock(mu_);
    buffers_.clear();
  }

  // Merged events ordered by (timestamp, rank, unit). Call after all writers joined.
  std::vector<TraceEvent> collect() const {
    std::lock_guard lock(mu_);
    std::vector<TraceEvent> out;
    for (const auto& b : buffers_) out.insert(out.end(), b.events().begin(), b.events().end());
    std::stable_sort(out.begin(), out.end(), [](const TraceEvent& a, const TraceEvent& b) {
      return std::tie(a.t_ns, a.rank, a.unit) < std::tie(b.t_ns, b.rank, b.unit);
    });
    return out;
  }

 private:
  bool enabled_;
  Clock::time_point origin_;
  mutable std::mutex mu_;
  std::deque<TraceBuffer> buffers_;
};

// Sizes of the three board regions, used to classify a flat channel index.
struct BoardLayout {
  std::size_t producer_consumer = 0;
  std::size_t peer = 0;
  std::size_t host = 0;

  enum class Region { producer_consumer, peer, host, unknown };
  Region region(std::size_t index) const {
    if (index < producer_consumer) return Region::producer_consumer;
    if (index < producer_consumer + peer) return Region::peer;
    if (index < producer_consumer + peer + host) return Region::host;
    return Region::unknown;
  }
};

struct UnitSummary {
  std::int64_t busy_ns = 0;
  std::int64_t wait_ns = 0;
  std::size_t tiles = 0;
  std::size_t copies = 0;
  std::size_t waits = 0;
  std::size_t peer_waits = 0;
  std::size_t host_waits = 0;
  std::size_t notifies = 0;
};

struct TraceSummary {
  std::map<std::pair<RankId, Unit>, UnitSummary> units;
  std::int64_t span_ns = 0;
  std::optional<std::int64_t> first_compute_tile_end;
  std::optional<std::int64_t> last_copy_end;
  std::vector<std::string> diagnostics;

  std::size_t total(std::size_t UnitSummary::*field) const {
    std::size_t n = 0;
    for (const auto& [key, s] : units) n += s.*field;
    return n;
  }
  bool ok() const { return diagnostics.empty(); }
};

inline nlohmann::json to_json(const TraceSummary& s) {
  nlohmann::json units = nlohmann::json::array();
  for (const auto& [key, u] : s.units) {
    units.push_back({{"rank", key.first},
                     {"unit", std::string(to_string(key.second))},
                     {"busy_ns", u.busy_ns},
                     {"wait_ns", u.wait_ns},
                     {"tiles", u.tiles},
                     {"copies", u.copies},
                     {"waits", u.waits},
                     {"peer_waits", u.peer_waits},
                     {"host_waits", u.host_waits},
                     {"notifies", u.notifies}});
  }
  return {{"span_ns", s.span_ns}, {"units", units}, {"diagnostics", s.diagnostics}};
}

// Checks whether a notify on `channel` is consistent with tile `tile`.
using NotifyCheck = std::function<bool(std::size_t tile, std::size_t channel)>;

// Busy and wait accounting per (rank, unit), plus structural checks:
// non-decreasing timestamps per (rank, unit), start/end pairing, FIFO order
// of copy-engine completions, and (optionally) notify channels against a
// mapping.
inline TraceSummary analyze_trace(std::span<const TraceEvent> events, const BoardLayout& layout = {},
                                  const NotifyCheck& notify_check = {}) {
  TraceSummary out;
  if (events.empty()) return out;

  std::map<std::pair<RankId, Unit>, std::int64_t> last_t;
  // Sum(end) - Sum(start) per pairing key gives the total span irrespective
  // of how concurrent workers interleave, as long as counts match.
  using Key = std::tuple<RankId, Unit, int, std::size_t>;
  std::map<Key, std::int64_t> open_count;
  std::map<Key, std::int64_t> open_sum;
  std::map<RankId, std::deque<std::size_t>> copy_fifo;

  std::int64_t t_min = events.front().t_ns;
  std::int64_t t_max = events.front().t_ns;
  auto describe = [](const TraceEvent& e) {
    return "rank " + std::to_string(e.rank) + " " + std::string(to_string(e.unit)) + " " +
           std::string(to_string(e.kind)) + " tile=" + (e.tile ? std::to_string(*e.tile) : "null") +
           " channel=" + (e.channel ? std::to_string(*e.channel) : "null") + " t=" + std::to_string(e.t_ns);
  };

  for (const TraceEvent& e : events) {
    t_min = std::min(t_min, e.t_ns);
    t_max = std::max(t_max, e.t_ns);
    auto& u = out.units[{e.rank, e.unit}];
    auto [it, fresh] = last_t.try_emplace({e.rank, e.unit}, e.t_ns);
    if (!fresh) {
      if (e.t_ns < it->second) out.diagnostics.push_back("timestamp decreases: " + describe(e));
      it->second = e.t_ns;
    }

    auto open = [&](int cls, std::size_t id) {
      const Key k{e.rank, e.unit, cls, id};
      ++open_count[k];
      open_sum[k] -= e.t_ns;
    };
    auto close = [&](int cls, std::size_t id) -> bool {
      const Key k{e.rank, e.unit, cls, id};
      auto c = open_count.find(k);
      if (c == open_count.end() || c->second == 0) {
        out.diagnostics.push_back("end without start: " + describe(e));
        return false;
      }
      --c->second;
      open_sum[k] += e.t_ns;
      return true;
    };

    switch (e.kind) {
      case EventKind::tile_start: open(0, e.tile.value_or(0)); break;
      case EventKind::tile_end:
        if (close(0, e.tile.value_or(0))) {
          ++u.tiles;
          if (e.unit == Unit::compute && !out.first_compute_tile_end) out.first_compute_tile_end = e.t_ns;
        }
        break;
      case EventKind::copy_start:
        open(1, e.tile.value_or(0));
        if (e.unit == Unit::copy) copy_fifo[e.rank].push_back(e.tile.value_or(0));
        break;
      case EventKind::copy_end:
        if (close(1, e.tile.value_or(0))) {
          ++u.copies;
          out.last_copy_end = std::max(out.last_copy_end.value_or(e.t_ns), e.t_ns);
        }
        if (e.unit == Unit::copy) {
          auto& q = copy_fifo[e.rank];
          if (q.empty() || q.front() != e.tile.value_or(0)) {
            out.diagnostics.push_back("copy engine completion out of issue order: " + describe(e));
          }
          if (!q.empty()) q.pop_front();
        }
        break;
      case EventKind::wait_start: open(2, e.channel.value_or(0)); break;
      case EventKind::wait_end:
        if (close(2, e.channel.value_or(0))) {
          ++u.waits;
          if (e.channel) {
            const auto region = layout.region(*e.channel);
            if (region == BoardLayout::Region::peer) ++u.peer_waits;
            if (region == BoardLayout::Region::host) ++u.host_waits;
          }
        }
        break;
      case EventKind::notify:
        ++u.notifies;
        if (notify_check && e.tile && e.channel && !notify_check(*e.tile, *e.channel)) {
          out.diagnostics.push_back("notify channel inconsistent with mapping: " + describe(e));
        }
        break;
    }
  }

  for (const auto& [k, n] : open_count) {
    if (n != 0) {
      out.diagnostics.push_back("unmatched start: rank " + std::to_string(std::get<0>(k)) + " " +
                                std::string(to_string(std::get<1>(k))) + " id " + std::to_string(std::get<3>(k)));
      continue;
    }
    auto& u = out.units[{std::get<0>(k), std::get<1>(k)}];
    (std::get<2>(k) == 2 ? u.wait_ns : u.busy_ns) += open_sum[k];
  }
  out.span_ns = t_max - t_min;
  return out;
}

// Fraction of communication time hidden by overlapping:
// (comp_only + comm_only - overlap) / comm_only.
inline double overlap_ratio(double comp_only, double comm_only, double overlap) {
  if (!(comm_only > 0.0)) throw DomainError("overlap_ratio: comm_only time must be > 0");
  return (comp_only + comm_only - overlap) / comm_only;
}

struct OverlapReport {
  double comp_only_s = 0.0;
  double comm_only_s = 0.0;
  double overlap_s = 0.0;
  double ratio = 0.0;
  nlohmann::json config = nlohmann::json::object();
};

inline nlohmann::json to_json(const OverlapReport& r) {
  return {{"comp_only_s", r.comp_only_s},
          {"comm_only_s", r.comm_only_s},
          {"overlap_s", r.overlap_s},
          {"ratio", r.ratio},
          {"config", r.config}};
}

}  // namespace tilelink
