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
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <deque>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "tilelink/errors.hpp"
#include "tilelink/mapping.hpp"
#include "tilelink/trace.hpp"
#include "tilelink/types.hpp"

namespace tilelink {

using namespace std::chrono_literals;

// Deadlock timeout, overridable through TILELINK_SIM_TIMEOUT_MS.
inline std::chrono::milliseconds default_timeout() {
  if (const char* env = std::getenv("TILELINK_SIM_TIMEOUT_MS")) {
    char* end = nullptr;
    const long long v = std::strtoll(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return std::chrono::milliseconds(v);
  }
  return 10000ms;
}

struct WorldOptions {
  int channels_per_rank = 1;
  std::chrono::milliseconds timeout = default_timeout();
  bool race_check = false;
  bool trace = false;
  // Simulated latency added to every tile transfer and copy-engine request.
  std::chrono::microseconds comm_delay{0};
  // Upper bound of the random delay injected around signal and write points.
  std::int64_t jitter_ns = 0;
  std::uint64_t seed = 0;
  // Fault hook: silently drop the first producer notify of every epoch.
  bool drop_first_notify = false;
};

enum class DType { f32, f64 };

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "symmetric tensors hold 32/64-bit reals");
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

// Race-checker state of every row of one rank's buffer:
// unwritten -> written -> published -> consumed.
class RowStates {
 public:
  enum State : std::uint8_t { unwritten, written, published, consumed };
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  explicit RowStates(std::size_t rows) : state_(rows, unwritten), writer_(rows, 0) {}

  void reset() {
    std::lock_guard lock(mu_);
    std::fill(state_.begin(), state_.end(), unwritten);
  }
  void write(ShapeRange rows, std::uint32_t writer) {
    std::lock_guard lock(mu_);
    for (std::size_t r = rows.lo; r < rows.hi; ++r) {
      state_[r] = written;
      writer_[r] = writer;
    }
  }
  void publish(ShapeRange rows, std::uint32_t writer) {
    std::lock_guard lock(mu_);
    for (std::size_t r = rows.lo; r < rows.hi; ++r) {
      if (state_[r] == written && writer_[r] == writer) state_[r] = published;
    }
  }
  void publish_all() {
    std::lock_guard lock(mu_);
    std::fill(state_.begin(), state_.end(), published);
  }
  // Returns the first row that is not readable by `reader`, or npos.
  std::size_t read(ShapeRange rows, std::uint32_t reader) {
    std::lock_guard lock(mu_);
    for (std::size_t r = rows.lo; r < rows.hi; ++r) {
      const bool own = state_[r] == written && writer_[r] == reader;
      if (state_[r] == published || state_[r] == consumed) {
        state_[r] = consumed;
      } else if (!own) {
        return r;
      }
    }
    return npos;
  }
  State at(std::size_t row) const {
    std::lock_guard lock(mu_);
    return static_cast<State>(state_[row]);
  }

 private:
  mutable std::mutex mu_;
  std::vector<std::uint8_t> state_;
  std::vector<std::uint32_t> writer_;
};

class TensorBase {
 public:
  TensorBase(std::size_t id, std::vector<std::size_t> shape, DType dtype, int world, bool track)
      : id_(id), shape_(std::move(shape)), dtype_(dtype), track_(track) {
    rows_ = shape_.front();
    row_elems_ = std::accumulate(shape_.begin() + 1, shape_.end(), std::size_t{1}, std::multiplies<>());
    for (int r = 0; r < world; ++r) states_.push_back(std::make_unique<RowStates>(rows_));
  }
  virtual ~TensorBase() = default;

  std::size_t id() const { return id_; }
  const std::vector<std::size_t>& shape() const { return shape_; }
  DType dtype() const { return dtype_; }
  std::size_t rows() const { return rows_; }
  std::size_t row_elems() const { return row_elems_; }
  bool tracked() const { return track_; }
  RowStates& states(RankId r) { return *states_.at(static_cast<std::size_t>(r)); }
  void reset_states() {
    for (auto& s : states_) s->reset();
  }

 private:
  std::size_t id_;
  std::vector<std::size_t> shape_;
  DType dtype_;
  bool track_;
  std::size_t rows_ = 0;
  std::size_t row_elems_ = 0;
  std::vector<std::unique_ptr<RowStates>> states_;
};

template <class T>
class TensorStorage : public TensorBase {
 public:
  TensorStorage(std::size_t id, std::vector<std::size_t> shape, int world, bool track)
      : TensorBase(id, std::move(shape), dtype_of<T>(), world, track) {
    for (int r = 0; r < world; ++r) data_.emplace_back(rows() * row_elems(), T{});
  }
  std::vector<T>& buffer(RankId r) { return data_.at(static_cast<std::size_t>(r)); }

 private:
  std::vector<std::vector<T>> data_;
};

// Handle to a buffer of identical shape on every rank. Copies share storage.
template <class T>
class SymmetricTensor {
 public:
  SymmetricTensor() = default;
  explicit SymmetricTensor(std::shared_ptr<TensorStorage<T>> s) : s_(std::move(s)) {}

  std::size_t id() const { return s_->id(); }
  const std::vector<std::size_t>& shape() const { return s_->shape(); }
  std::size_t rows() const { return s_->rows(); }
  std::size_t row_elems() const { return s_->row_elems(); }
  TensorStorage<T>& storage() const { return *s_; }

  // Raw access for host code outside a run (no race checking).
  std::span<T> local(RankId r) const { return s_->buffer(r); }

  // Host-side initialisation before a run; the rows count as published.
  void upload(RankId r, std::span<const T> data, std::size_t first_row = 0) const {
    const std::size_t elems = data.size();
    if (elems % row_elems() != 0 || first_row * row_elems() + elems > s_->buffer(r).size()) {
      throw DomainError("upload: data does not fit tensor " + std::to_string(id()));
    }
    std::copy(data.begin(), data.end(), s_->buffer(r).begin() + static_cast<std::ptrdiff_t>(first_row * row_elems()));
    if (s_->tracked()) {
      const ShapeRange rows{first_row, first_row + elems / row_elems()};
      s_->states(r).write(rows, 0);
      s_->states(r).publish(rows, 0);
    }
  }

  std::vector<T> download(RankId r) const { return s_->buffer(r); }

 private:
  std::shared_ptr<TensorStorage<T>> s_;
};

struct HeapEntry {
  std::size_t id;
  std::vector<std::size_t> shape;
  DType dtype;
};

class World;
class UnitContext;

// Per-rank FIFO queue of copy requests served by a dedicated context.
class CopyEngine {
 public:
  using Job = std::function<void(UnitContext&)>;

  void submit(Job job) {
    {
      std::lock_guard lock(mu_);
      queue_.push_back(std::move(job));
    }
    cv_.notify_one();
  }

  void open() {
    std::lock_guard lock(mu_);
    closing_ = false;
    queue_.clear();
  }

  void close() {
    {
      std::lock_guard lock(mu_);
      closing_ = true;
    }
    cv_.notify_all();
  }

  // Runs jobs in submission order until closed and drained, or aborted.
  void serve(UnitContext& ctx, const std::atomic<bool>& aborted) {
    for (;;) {
      Job job;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return closing_ || !queue_.empty() || aborted.load(); });
        if (aborted.load()) return;
        if (queue_.empty()) return;
        job = std::move(queue_.front());
        queue_.pop_front();
      }
      job(ctx);
    }
  }

  void wake() { cv_.notify_all(); }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Job> queue_;
  bool closing_ = false;
};

namespace detail {

// Thrown in units unblocked by another unit's failure.
class Aborted : public Error {
 public:
  using Error::Error;
};

// Channel word: epoch in the high 32 bits, arrival count in the low 32.
inline std::uint32_t count_in_epoch(std::uint64_t word, std::uint32_t epoch) {
  return static_cast<std::uint32_t>(word >> 32) == epoch ? static_cast<std::uint32_t>(word) : 0;
}

struct SignalBoard {
  BoardLayout layout;
  std::size_t size = 0;
  std::unique_ptr<std::atomic<std::uint64_t>[]> slots;
  std::vector<std::uint32_t> expected;
  std::vector<std::uint32_t> host_taken;
  std::mutex mu;
  std::condition_variable cv;

  void resize(const BoardLayout& l) {
    layout = l;
    const std::size_t n = l.producer_consumer + l.peer + l.host;
    if (n != size) {
      slots = std::make_unique<std::atomic<std::uint64_t>[]>(n);
      for (std::size_t i = 0; i < n; ++i) slots[i].store(0, std::memory_order_relaxed);
      size = n;
    }
    expected.assign(n, 0);
    std::fill(expected.begin() + static_cast<std::ptrdiff_t>(l.producer_consumer), expected.begin() +
              static_cast<std::ptrdiff_t>(l.producer_consumer + l.peer), 1u);
    host_taken.assign(l.host, 0);
  }
};

}  // namespace detail

// The simulated machine: R ranks, their signal boards, the symmetric heap
// and one copy engine per rank.
class World {
 public:
  World(int world_size, WorldOptions opts = {}) : world_(world_size), opts_(opts), tracer_(opts.trace) {
    if (world_size < 1) throw ConfigError("world size must be >= 1");
    if (opts.channels_per_rank < 1) throw ConfigError("channels per rank must be >= 1");
    if (opts.timeout <= 0ms) throw ConfigError("timeout must be > 0");
    for (int r = 0; r < world_; ++r) {
      boards_.push_back(std::make_unique<detail::SignalBoard>());
      engines_.push_back(std::make_unique<CopyEngine>());
    }
    begin_epoch(1, 0);
    epoch_ = 0;
  }
  World(const World&) = delete;
  World& operator=(const World&) = delete;

  int world_size() const { return world_; }
  int channels_per_rank() const { return opts_.channels_per_rank; }
  std::size_t num_channels() const { return static_cast<std::size_t>(world_) * opts_.channels_per_rank; }
  std::uint32_t epoch() const { return epoch_; }
  const WorldOptions& options() const { return opts_; }
  WorldOptions& mutable_options() { return opts_; }
  Tracer& tracer() { return tracer_; }
  BoardLayout layout() const { return boards_.front()->layout; }

  template <class T>
  SymmetricTensor<T> alloc_symmetric(std::vector<std::size_t> shape) {
    if (shape.empty()) throw ConfigError("alloc_symmetric: shape must be non-empty");
    for (std::size_t d : shape) {
      if (d == 0) throw ConfigError("alloc_symmetric: zero-sized dimension");
    }
    std::lock_guard lock(heap_mu_);
    auto s = std::make_shared<TensorStorage<T>>(heap_.size(), shape, world_, opts_.race_check);
    heap_.push_back(s);
    return SymmetricTensor<T>(std::move(s));
  }

  std::vector<HeapEntry> heap() const {
    std::lock_guard lock(heap_mu_);
    std::vector<HeapEntry> out;
    for (const auto& t : heap_) out.push_back({t->id(), t->shape(), t->dtype()});
    return out;
  }

  // Starts a kernel invocation: bumps the epoch (all earlier arrivals become
  // stale), sizes the board regions and clears expectations. Must not be
  // called while units are running.
  void begin_epoch(std::size_t barrier_sets = 1, std::size_t peer_slots = 0) {
    ++epoch_;
    const BoardLayout l{barrier_sets * num_channels(), peer_slots, static_cast<std::size_t>(world_)};
    for (auto& b : boards_) b->resize(l);
    producer_notifies_.store(0);
    aborted_.store(false);
    deadlock_claimed_.store(false);
    abort_reason_.clear();
    blocked_.clear();
    violations_.clear();
    next_unit_id_.store(1);
    {
      std::lock_guard lock(heap_mu_);
      if (opts_.race_check) {
        for (auto& t : heap_) t->reset_states();
      }
    }
    if (tracer_.enabled()) tracer_.clear();
  }

  std::size_t pc_index(std::size_t set, ChannelId c) const {
    const std::size_t i = set * num_channels() + c.get();
    if (c.get() >= num_channels() || i >= layout().producer_consumer) {
      throw DomainError("channel " + std::to_string(c.get()) + " of barrier set " + std::to_string(set) +
                        " outside the board");
    }
    return i;
  }
  std::size_t peer_index(std::size_t slot) const {
    if (slot >= layout().peer) {
      throw DomainError("peer slot " + std::to_string(slot) + " outside the board (" + std::to_string(layout().peer) +
                        " slots)");
    }
    return layout().producer_consumer + slot;
  }
  std::size_t host_index(RankId from) const { return layout().producer_consumer + layout().peer + from; }

  void check_rank(RankId r) const {
    if (r < 0 || r >= world_) {
      throw DomainError("rank " + std::to_string(r) + " out of range [0, " + std::to_string(world_) + ")");
    }
  }

  // Arrivals each board expects on a producer/consumer channel this epoch.
  void expect_arrivals(RankId board, std::size_t set, ChannelId c, std::uint32_t n) {
    check_rank(board);
    boards_[board]->expected[pc_index(set, c)] += n;
  }
  void set_expected_peer(RankId board, std::size_t slot, std::uint32_t n) {
    check_rank(board);
    boards_[board]->expected[peer_index(slot)] = n;
  }
  std::uint32_t expected(RankId board, std::size_t index) const { return boards_.at(board)->expected.at(index); }

  // Current-epoch arrival count of a board slot.
  std::uint32_t arrivals(RankId board, std::size_t index) const {
    return detail::count_in_epoch(boards_.at(board)->slots[index].load(std::memory_order_acquire), epoch_);
  }

  struct Program {
    std::function<void(UnitContext&)> host;
    std::function<void(UnitContext&)> compute;
    std::function<void(UnitContext&)> comm;
    int compute_workers = 1;
    int comm_workers = 1;
  };

  // Runs every rank's contexts to completion and returns elapsed seconds.
  // The first root-cause failure is rethrown after all contexts joined.
  inline double run(const Program& p);

  CopyEngine& copy_engine(RankId r) { return *engines_.at(static_cast<std::size_t>(r)); }

  std::vector<std::string> race_violations() const {
    std::lock_guard lock(violation_mu_);
    return violations_;
  }

  bool aborted() const { return aborted_.load(); }

 private:
  friend class UnitContext;

  struct BlockedWait {
    std::string who;
    RankId board;
    std::size_t index;
    std::uint32_t need;
  };

  std::string describe_slot(RankId board, std::size_t index) const {
    const BoardLayout l = layout();
    switch (l.region(index)) {
      case BoardLayout::Region::producer_consumer:
        return "producer-consumer channel " + std::to_string(index % num_channels()) + " (set " +
               std::to_string(index / num_channels()) + ") on rank " + std::to_string(board);
      case BoardLayout::Region::peer:
        return "peer channel " + std::to_string(index - l.producer_consumer) + " on rank " + std::to_string(board);
      case BoardLayout::Region::host:
        return "host channel from rank " + std::to_string(index - l.producer_consumer - l.peer) + " on rank " +
               std::to_string(board);
      default: return "slot " + std::to_string(index);
    }
  }

  std::string blocked_report() {
    std::lock_guard lock(blocked_mu_);
    std::string out;
    for (const auto& [key, w] : blocked_) {
      out += "\n  " + w.who + " blocked on " + describe_slot(w.board, w.index) + ": count " +
             std::to_string(arrivals(w.board, w.index)) + " < expected " + std::to_string(w.need);
    }
    return out;
  }

  void abort(const std::string& reason) {
    bool expected = false;
    if (aborted_.compare_exchange_strong(expected, true)) {
      std::lock_guard lock(blocked_mu_);
      abort_reason_ = reason;
    }
    for (auto& b : boards_) {
      std::lock_guard lock(b->mu);
      b->cv.notify_all();
    }
    for (auto& e : engines_) e->wake();
  }

  void record_violation(const std::string& v) {
    std::lock_guard lock(violation_mu_);
    violations_.push_back(v);
  }

  int world_;
  WorldOptions opts_;
  Tracer tracer_;
  std::uint32_t epoch_ = 0;
  std::vector<std::unique_ptr<detail::SignalBoard>> boards_;
  std::vector<std::unique_ptr<CopyEngine>> engines_;

  mutable std::mutex heap_mu_;
  std::vector<std::shared_ptr<TensorBase>> heap_;

  std::atomic<std::size_t> producer_notifies_{0};
  std::atomic<std::uint32_t> next_unit_id_{1};
  std::atomic<bool> aborted_{false};
  std::atomic<bool> deadlock_claimed_{false};

  std::mutex blocked_mu_;
  std::string abort_reason_;
  std::map<const void*, BlockedWait> blocked_;

  mutable std::mutex violation_mu_;
  std::vector<std::string> violations_;
};

inline World init_world(int world_size, int channels_per_rank) {
  if (world_size < 1) throw ConfigError("init_world: R must be >= 1");
  if (channels_per_rank < 1) throw ConfigError("init_world: C must be >= 1");
  WorldOptions opts;
  opts.channels_per_rank = channels_per_rank;
  return World(world_size, opts);
}

template <class T>
SymmetricTensor<T> alloc_symmetric(World& w, std::vector<std::size_t> shape) {
  return w.alloc_symmetric<T>(std::move(shape));
}

// One execution context of one rank: the host control thread, a compute
// worker, a communication worker, or the copy engine. All primitives are
// invoked through it so that signals, tracing and race checking know the
// caller.
class UnitContext {
 public:
  UnitContext(World& w, RankId rank, Unit unit, int worker = 0, int workers = 1, bool comm = false)
      : world_(&w),
        rank_(rank),
        unit_(unit),
        worker_(worker),
        workers_(workers),
        comm_(comm),
        id_(w.next_unit_id_.fetch_add(1)),
        trace_(w.tracer().open(rank, unit)),
        rng_(w.options().seed * 0x9E3779B97F4A7C15ull + w.epoch() * 1000003ull + id_) {}

  World& world() const { return *world_; }
  RankId rank() const { return rank_; }
  Unit unit() const { return unit_; }
  int worker() const { return worker_; }
  int workers() const { return workers_; }
  std::uint32_t id() const { return id_; }
  // True for compute-unit workers granted to communication.
  bool comm() const { return comm_; }

  std::string name() const {
    return "rank " + std::to_string(rank_) + " " + (comm_ ? std::string("comm") : std::string(to_string(unit_))) +
           "#" + std::to_string(worker_);
  }

  // ---- signal primitives -------------------------------------------------

  // Marks producer tile t done and notifies its consumers: on the mapping's
  // rank for p2p, on every rank for broadcast. Release semantics.
  template <TileMapping M>
  void producer_tile_notify(const M& m, TileId t, NotifyMode mode, std::size_t set = 0) {
    const ChannelList chans = m.channels(t);
    const RankId target = mode == NotifyMode::p2p ? m.rank(t) : 0;
    if (mode == NotifyMode::p2p) world_->check_rank(target);
    if (world_->opts_.drop_first_notify && world_->producer_notifies_.fetch_add(1) == 0) return;
    for (ChannelId c : chans) {
      const std::size_t index = world_->pc_index(set, c);
      if (mode == NotifyMode::p2p) {
        signal(target, index, t.get());
      } else {
        for (RankId r = 0; r < world_->world_size(); ++r) signal(r, index, t.get());
      }
    }
  }

  // Blocks until every channel of consumer tile t reached its expected
  // arrival count on this rank's board. Acquire semantics.
  template <TileMapping M>
  void consumer_tile_wait(const M& m, TileId t, std::size_t set = 0) {
    for (ChannelId c : m.channels(t)) {
      const std::size_t index = world_->pc_index(set, c);
      wait_slot(rank_, index, world_->expected(rank_, index), t.get());
    }
  }

  // Peer channels are keyed by (tile, target rank).
  void peer_tile_notify(TileId t, RankId rank) {
    world_->check_rank(rank);
    signal(rank, world_->peer_index(t.get()), t.get());
  }

  void peer_tile_wait(TileId t, RankId rank) {
    world_->check_rank(rank);
    const std::size_t index = world_->peer_index(t.get());
    wait_slot(rank, index, world_->expected(rank, index), t.get());
  }

  // Host-level signal: tells `rank` that data at tile t from this rank is
  // ready. Used by host contexts and by copy-engine completions.
  void rank_notify(TileId t, RankId rank) {
    require_host_side("rank_notify");
    world_->check_rank(rank);
    signal(rank, world_->host_index(rank_), t.get());
  }

  // Blocks this rank's host until the next host-level arrival from `rank`.
  void rank_wait(RankId rank) {
    require_host_side("rank_wait");
    world_->check_rank(rank);
    auto& board = *world_->boards_[rank_];
    const std::size_t index = world_->host_index(rank);
    const std::uint32_t need = ++board.host_taken[static_cast<std::size_t>(rank)];
    wait_slot(rank_, index, need, std::nullopt);
  }

  // ---- memory access -----------------------------------------------------

  template <class T>
  std::span<const T> read_rows(const SymmetricTensor<T>& tensor, RankId owner, ShapeRange rows) {
    world_->check_rank(owner);
    auto& s = tensor.storage();
    check_rows(s, rows);
    if (s.tracked()) {
      const std::size_t bad = s.states(owner).read(rows, id_);
      if (bad != RowStates::npos) {
        const std::string v = name() + " read unpublished row " + std::to_string(bad) + " of tensor " +
                              std::to_string(s.id()) + " on rank " + std::to_string(owner);
        world_->record_violation(v);
        throw RaceViolation(v);
      }
    }
    const auto& buf = s.buffer(owner);
    return std::span<const T>(buf).subspan(rows.lo * s.row_elems(), rows.size() * s.row_elems());
  }

  template <class T>
  void write_rows(const SymmetricTensor<T>& tensor, RankId owner, ShapeRange rows, std::span<const T> data) {
    world_->check_rank(owner);
    auto& s = tensor.storage();
    check_rows(s, rows);
    const std::size_t width = s.row_elems();
    if (data.size() != rows.size() * width) {
      throw DomainError("write of " + std::to_string(data.size()) + " elements into " +
                        std::to_string(rows.size()) + " rows of width " + std::to_string(width));
    }
    auto& buf = s.buffer(owner);
    if (world_->opts_.jitter_ns > 0) {
      for (std::size_t r = 0; r < rows.size(); ++r) {
        std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(r * width), width,
                    buf.begin() + static_cast<std::ptrdiff_t>((rows.lo + r) * width));
        jitter();
      }
    } else {
      std::copy(data.begin(), data.end(), buf.begin() + static_cast<std::ptrdiff_t>(rows.lo * width));
    }
    if (s.tracked()) {
      s.states(owner).write(rows, id_);
      pending_.push_back({&s, owner, rows});
    }
  }

  // Writes columns [col_lo, col_lo + width) of `rows`; data is rows x width.
  template <class T>
  void write_block(const SymmetricTensor<T>& tensor, RankId owner, ShapeRange rows, std::size_t col_lo,
                   std::size_t width, std::span<const T> data) {
    world_->check_rank(owner);
    auto& s = tensor.storage();
    check_rows(s, rows);
    const std::size_t stride = s.row_elems();
    if (col_lo + width > stride || data.size() != rows.size() * width) {
      throw DomainError("write_block: block does not fit tensor " + std::to_string(s.id()));
    }
    auto& buf = s.buffer(owner);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(r * width), width,
                  buf.begin() + static_cast<std::ptrdiff_t>((rows.lo + r) * stride + col_lo));
      if (world_->opts_.jitter_ns > 0) jitter();
    }
    if (s.tracked()) {
      s.states(owner).write(rows, id_);
      pending_.push_back({&s, owner, rows});
    }
  }

  // ---- instrumentation ---------------------------------------------------

  void trace(EventKind kind, std::optional<std::size_t> tile = std::nullopt,
             std::optional<std::size_t> channel = std::nullopt) {
    if (trace_) trace_->record(kind, world_->tracer().now_ns(), tile, channel);
  }

  // Random delay of up to jitter_ns; no-op unless injection is enabled.
  void jitter() {
    const std::int64_t max_ns = world_->opts_.jitter_ns;
    if (max_ns <= 0) return;
    const auto d = std::chrono::nanoseconds(static_cast<std::int64_t>(rng_() % static_cast<std::uint64_t>(max_ns)));
    if (rng_() % 4 == 0) std::this_thread::yield();
    const auto until = std::chrono::steady_clock::now() + d;
    while (std::chrono::steady_clock::now() < until) {
    }
  }

  void comm_delay() const {
    if (world_->opts_.comm_delay.count() > 0) std::this_thread::sleep_for(world_->opts_.comm_delay);
  }

 private:
  struct PendingWrite {
    TensorBase* tensor;
    RankId owner;
    ShapeRange rows;
  };

  void require_host_side(const char* op) const {
    if (unit_ == Unit::compute) throw ConfigError(std::string(op) + " is a host primitive; called from " + name());
  }

  static void check_rows(const TensorBase& s, ShapeRange rows) {
    if (rows.lo > rows.hi || rows.hi > s.rows()) {
      throw DomainError("rows [" + std::to_string(rows.lo) + ", " + std::to_string(rows.hi) + ") outside tensor " +
                        std::to_string(s.id()) + " with " + std::to_string(s.rows()) + " rows");
    }
  }

  void publish_pending() {
    for (const auto& p : pending_) p.tensor->states(p.owner).publish(p.rows, id_);
    pending_.clear();
  }

  void signal(RankId board_rank, std::size_t index, std::optional<std::size_t> tile) {
    jitter();
    publish_pending();
    auto& board = *world_->boards_[board_rank];
    const std::uint32_t epoch = world_->epoch_;
    auto& slot = board.slots[index];
    std::uint64_t old = slot.load(std::memory_order_relaxed);
    std::uint64_t next;
    do {
      next = static_cast<std::uint32_t>(old >> 32) == epoch ? old + 1 : (std::uint64_t{epoch} << 32) | 1u;
    } while (!slot.compare_exchange_weak(old, next, std::memory_order_acq_rel, std::memory_order_relaxed));
    trace(EventKind::notify, tile, index);
    {
      std::lock_guard lock(board.mu);
    }
    board.cv.notify_all();
  }

  void wait_slot(RankId board_rank, std::size_t index, std::uint32_t need, std::optional<std::size_t> tile) {
    auto& board = *world_->boards_[board_rank];
    const std::uint32_t epoch = world_->epoch_;
    auto ready = [&] {
      return detail::count_in_epoch(board.slots[index].load(std::memory_order_acquire), epoch) >= need;
    };
    trace(EventKind::wait_start, tile, index);
    if (!ready()) {
      for (int spin = 0; spin < 64 && !ready(); ++spin) std::this_thread::yield();
    }
    if (!ready()) {
      {
        std::lock_guard lock(world_->blocked_mu_);
        world_->blocked_[this] = {name(), board_rank, index, need};
      }
      const auto deadline = std::chrono::steady_clock::now() + world_->opts_.timeout;
      std::unique_lock lock(board.mu);
      while (!ready()) {
        if (world_->aborted_.load()) {
          lock.unlock();
          unblock();
          throw detail::Aborted("aborted while " + name() + " waited");
        }
        if (board.cv.wait_until(lock, deadline) == std::cv_status::timeout && !ready()) {
          lock.unlock();
          // Units of a stalled world time out in quick succession; only the
          // first reports, while every other blocked unit is still listed.
          bool expected = false;
          if (!world_->deadlock_claimed_.compare_exchange_strong(expected, true)) {
            unblock();
            throw detail::Aborted("aborted while " + name() + " waited");
          }
          std::string report = "deadlock: " + name() + " timed out after " +
                               std::to_string(world_->opts_.timeout.count()) + " ms waiting on " +
                               world_->describe_slot(board_rank, index) + "; blocked units:" +
                               world_->blocked_report();
          unblock();
          world_->abort(report);
          throw DeadlockError(report);
        }
      }
      lock.unlock();
      unblock();
    }
    trace(EventKind::wait_end, tile, index);
    jitter();
  }

  void unblock() {
    std::lock_guard lock(world_->blocked_mu_);
    world_->blocked_.erase(this);
  }

  World* world_;
  RankId rank_;
  Unit unit_;
  int worker_;
  int workers_;
  bool comm_;
  std::uint32_t id_;
  TraceBuffer* trace_;
  std::mt19937_64 rng_;
  std::vector<PendingWrite> pending_;
};

inline double World::run(const Program& p) {
  std::mutex err_mu;
  std::exception_ptr root;
  std::exception_ptr deadlock;
  auto guard = [&](auto&& body) {
    try {
      body();
    } catch (const detail::Aborted&) {
    } catch (const DeadlockError&) {
      std::lock_guard lock(err_mu);
      if (!deadlock) deadlock = std::current_exception();
    } catch (const std::exception& e) {
      {
        std::lock_guard lock(err_mu);
        if (!root) root = std::current_exception();
      }
      abort(e.what());
    } catch (...) {
      {
        std::lock_guard lock(err_mu);
        if (!root) root = std::current_exception();
      }
      abort("unknown exception");
    }
  };

  for (auto& e : engines_) e->open();
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<std::thread> engines;
  for (RankId r = 0; r < world_; ++r) {
    engines.emplace_back([&, r] {
      guard([&] {
        UnitContext ctx(*this, r, Unit::copy);
        engines_[r]->serve(ctx, aborted_);
      });
    });
  }
  std::vector<std::thread> units;
  for (RankId r = 0; r < world_; ++r) {
    if (p.host) {
      units.emplace_back([&, r] {
        guard([&] {
          UnitContext ctx(*this, r, Unit::host);
          p.host(ctx);
        });
      });
    }
    if (p.compute) {
      for (int w = 0; w < p.compute_workers; ++w) {
        units.emplace_back([&, r, w] {
          guard([&] {
            UnitContext ctx(*this, r, Unit::compute, w, p.compute_workers);
            p.compute(ctx);
          });
        });
      }
    }
    if (p.comm) {
      for (int w = 0; w < p.comm_workers; ++w) {
        units.emplace_back([&, r, w] {
          guard([&] {
            UnitContext ctx(*this, r, Unit::compute, w, p.comm_workers, true);
            p.comm(ctx);
          });
        });
      }
    }
  }
  for (auto& t : units) t.join();
  for (auto& e : engines_) e->close();
  for (auto& t : engines) t.join();
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (root) std::rethrow_exception(root);
  if (deadlock) std::rethrow_exception(deadlock);
  return elapsed;
}

}  // namespace tilelink
