#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "sgm/comm.hpp"
#include "sgm/common.hpp"
#include "sgm/graph.hpp"
#include "sgm/partition.hpp"
#include "sgm/plan.hpp"
#include "sgm/query.hpp"

namespace sgm {

// ---------------------------------------------------------------------------
// Intermediate tuples

// Which query vertices a relation carries, and in what serialization order.
// Concrete vertices are matched one-to-one; compressed vertices carry a
// candidate array per tuple.
struct Schema {
  std::vector<QVertex> concrete;
  std::vector<QVertex> compressed;

  bool carries(QVertex v) const {
    return std::find(concrete.begin(), concrete.end(), v) != concrete.end() ||
           std::find(compressed.begin(), compressed.end(), v) != compressed.end();
  }
  int concrete_pos(QVertex v) const {
    auto it = std::find(concrete.begin(), concrete.end(), v);
    return it == concrete.end() ? -1 : static_cast<int>(it - concrete.begin());
  }
};

struct Row {
  std::vector<VertexId> concrete;               // aligned to Schema::concrete
  std::vector<std::vector<VertexId>> arrays;    // aligned to Schema::compressed

  std::size_t ints() const {
    std::size_t n = concrete.size();
    for (const auto& a : arrays) n += 1 + a.size();
    return n;
  }

  void serialize(std::vector<std::uint32_t>& out) const {
    out.insert(out.end(), concrete.begin(), concrete.end());
    for (const auto& a : arrays) {
      out.push_back(static_cast<std::uint32_t>(a.size()));
      out.insert(out.end(), a.begin(), a.end());
    }
  }

  static Row parse(const Schema& schema, const std::uint32_t* data, std::size_t size,
                   std::size_t& pos) {
    Row r;
    if (pos + schema.concrete.size() > size) throw ExecError("truncated tuple");
    r.concrete.assign(data + pos, data + pos + schema.concrete.size());
    pos += schema.concrete.size();
    r.arrays.resize(schema.compressed.size());
    for (auto& a : r.arrays) {
      if (pos >= size) throw ExecError("truncated tuple array");
      std::uint32_t len = data[pos++];
      if (pos + len > size) throw ExecError("truncated tuple array body");
      a.assign(data + pos, data + pos + len);
      pos += len;
    }
    return r;
  }
};

// Order/injectivity context for expansions.
struct MatchConstraints {
  const QueryGraph* q = nullptr;
  PartialOrder order;   // empty when labelled or disabled
};

namespace detail {

inline bool order_ok(const MatchConstraints& c, const std::vector<VertexId>& assign,
                     QVertexSet assigned) {
  for (auto [a, b] : c.order) {
    if ((assigned & QueryGraph::bit(a)) && (assigned & QueryGraph::bit(b)) &&
        !(assign[a] < assign[b]))
      return false;
  }
  return true;
}

}  // namespace detail

// Expands a full-coverage row into concrete matches (aligned to query vertex
// index), filtering candidate arrays by injectivity across all positions and
// by the order constraints. `sink` may be null to count only.
inline std::uint64_t decompress_row(const QueryGraph& q, const Schema& schema, const Row& row,
                                    const MatchConstraints& cons,
                                    const std::function<void(const std::vector<VertexId>&)>* sink) {
  const int n = q.num_vertices();
  std::vector<VertexId> assign(static_cast<std::size_t>(n), kInvalidVertex);
  QVertexSet assigned = 0;
  for (std::size_t i = 0; i < schema.concrete.size(); ++i) {
    assign[schema.concrete[i]] = row.concrete[i];
    assigned |= QueryGraph::bit(schema.concrete[i]);
  }
  std::uint64_t count = 0;
  auto rec = [&](auto&& self, std::size_t ai) -> void {
    if (ai == schema.compressed.size()) {
      ++count;
      if (sink) (*sink)(assign);
      return;
    }
    QVertex v = schema.compressed[ai];
    for (VertexId c : row.arrays[ai]) {
      bool dup = false;
      for (int j = 0; j < n && !dup; ++j)
        if ((assigned & QueryGraph::bit(static_cast<QVertex>(j))) && assign[static_cast<std::size_t>(j)] == c)
          dup = true;
      if (dup) continue;
      assign[v] = c;
      assigned |= QueryGraph::bit(v);
      bool ok = true;
      for (auto [a, b] : cons.order) {
        if (a != v && b != v) continue;
        if ((assigned & QueryGraph::bit(a)) && (assigned & QueryGraph::bit(b)) &&
            !(assign[a] < assign[b])) {
          ok = false;
          break;
        }
      }
      if (ok) self(self, ai + 1);
      assigned &= ~QueryGraph::bit(v);
      assign[v] = kInvalidVertex;
    }
  };
  rec(rec, 0);
  return count;
}

// ---------------------------------------------------------------------------
// Counters and timing

struct Counters {
  std::uint64_t recv_integers = 0;
  std::uint64_t sent_integers = 0;
  double comp_seconds = 0;
  double total_seconds = 0;
  std::uint64_t join_peak_tuples = 0;       // instrumented in-memory tuple peak
  std::uint64_t join_max_group_tuples = 0;  // largest single-key group seen
  std::uint64_t received_edge_ints = 0;     // ShrCube routing payload
  std::uint64_t local_graph_edges = 0;      // ShrCube: distinct edges after dedup
  std::uint64_t matching_recv_integers = 0; // recv during the matching phase only
  std::uint64_t computed_before_dedup = 0;  // ShrCube: local matches pre-filter
  std::uint64_t result_count = 0;
};

class CompTimer {
 public:
  explicit CompTimer(double& acc) : acc_(acc), start_(std::chrono::steady_clock::now()) {}
  ~CompTimer() {
    acc_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  double& acc_;
  std::chrono::steady_clock::time_point start_;
};

// ---------------------------------------------------------------------------
// Generic shuffle

// Delivers every tuple to worker key_fn(t) mod w. Returns the tuples received
// by `me`. Collective: every worker must call it with the same stage.
template <typename KeyFn>
std::vector<std::vector<std::uint32_t>> shuffle_tuples(
    Comm& comm, std::uint32_t me, std::uint32_t stage,
    const std::vector<std::vector<std::uint32_t>>& mine, KeyFn key_fn) {
  const std::uint32_t w = comm.num_workers();
  {
    BufferedSender out(comm, me, stage);
    for (const auto& t : mine) {
      std::vector<std::uint32_t> rec;
      rec.push_back(static_cast<std::uint32_t>(t.size()));
      rec.insert(rec.end(), t.begin(), t.end());
      out.append_record(key_fn(t) % w, rec);
    }
    out.flush_all();
  }
  comm.close_stage(me, stage);
  std::vector<std::vector<std::uint32_t>> got;
  while (auto m = comm.recv(me, stage)) {
    std::size_t pos = 0;
    const auto& p = m->payload;
    while (pos < p.size()) {
      std::uint32_t len = p[pos++];
      if (pos + len > p.size()) throw ExecError("malformed shuffle record");
      got.emplace_back(p.begin() + static_cast<std::ptrdiff_t>(pos),
                       p.begin() + static_cast<std::ptrdiff_t>(pos + len));
      pos += len;
    }
  }
  return got;
}

// ---------------------------------------------------------------------------
// Buffer-and-Batch external hash join

inline std::uint64_t key_hash(const std::vector<VertexId>& key_vals) {
  std::uint64_t h = 0x9e3779b97f4a7c15ULL;
  for (VertexId v : key_vals) h = hash_combine(h, v);
  return h;
}

// One side of a join, buffered to a threshold and spilled to sorted runs.
// Spill files hold rows sorted by (key hash, key), with a 16-stripe
// hash-range index so the merge phase can visit one range at a time.
class SpillSide {
 public:
  static constexpr int kStripes = 16;

  SpillSide(Schema schema, std::vector<QVertex> key, std::size_t threshold,
            std::filesystem::path dir, std::uint64_t* current, std::uint64_t* peak)
      : schema_(std::move(schema)), key_(std::move(key)), threshold_(std::max<std::size_t>(threshold, 1)),
        dir_(std::move(dir)), current_(current), peak_(peak) {
    for (QVertex v : key_)
      if (schema_.concrete_pos(v) < 0) throw ExecError("join key vertex not concrete in schema");
  }

  ~SpillSide() {
    for (auto& r : runs_) {
      std::error_code ec;
      std::filesystem::remove(r.path, ec);
    }
  }

  const Schema& schema() const { return schema_; }

  std::vector<VertexId> key_values(const Row& r) const {
    std::vector<VertexId> vals;
    vals.reserve(key_.size());
    for (QVertex v : key_) vals.push_back(r.concrete[static_cast<std::size_t>(schema_.concrete_pos(v))]);
    return vals;
  }

  void add(Row row) {
    buffer_.push_back(std::move(row));
    bump(+1);
    if (buffer_.size() >= threshold_) spill();
  }

  void seal() {
    sort_buffer();
  }

  std::size_t num_runs() const { return runs_.size() + (buffer_.empty() ? 0 : 1); }
  std::size_t spilled_runs() const { return runs_.size(); }

  // Pull-cursor over one hash stripe in (hash, key) order, merging all runs
  // with the in-memory tail.
  class StripeStream {
   public:
    StripeStream(SpillSide& side, int stripe) : side_(side) {
      for (auto& run : side.runs_) {
        Cursor c;
        c.file = std::make_unique<std::ifstream>(run.path, std::ios::binary);
        if (!*c.file) throw ExecError("cannot reopen spill run");
        c.file->seekg(static_cast<std::streamoff>(run.stripe_offsets[static_cast<std::size_t>(stripe)]));
        c.remaining = run.stripe_counts[static_cast<std::size_t>(stripe)];
        cursors_.push_back(std::move(c));
      }
      Cursor mem;
      mem.from_buffer = true;
      mem.buf_pos = side.buffer_stripe_begin(stripe);
      mem.buf_end = side.buffer_stripe_begin(stripe + 1);
      cursors_.push_back(std::move(mem));
      for (auto& c : cursors_) advance(c);
    }

    std::optional<std::pair<std::uint64_t, Row>> next() {
      int best = -1;
      for (int i = 0; i < static_cast<int>(cursors_.size()); ++i) {
        auto& c = cursors_[static_cast<std::size_t>(i)];
        if (!c.head) continue;
        if (best < 0 || less(c, cursors_[static_cast<std::size_t>(best)])) best = i;
      }
      if (best < 0) return std::nullopt;
      auto out = std::move(cursors_[static_cast<std::size_t>(best)].head);
      advance(cursors_[static_cast<std::size_t>(best)]);
      return out;
    }

   private:
    struct Cursor {
      std::unique_ptr<std::ifstream> file;
      std::uint64_t remaining = 0;
      bool from_buffer = false;
      std::size_t buf_pos = 0, buf_end = 0;
      std::optional<std::pair<std::uint64_t, Row>> head;
    };

    bool less(const Cursor& a, const Cursor& b) const {
      if (a.head->first != b.head->first) return a.head->first < b.head->first;
      return side_.key_values(a.head->second) < side_.key_values(b.head->second);
    }

    void advance(Cursor& c) {
      c.head.reset();
      if (c.from_buffer) {
        if (c.buf_pos < c.buf_end) {
          Row r = side_.buffer_[c.buf_pos++];
          c.head = {key_hash(side_.key_values(r)), std::move(r)};
        }
      } else if (c.remaining > 0) {
        c.remaining--;
        std::uint32_t len = 0;
        detail::read_pod(*c.file, &len, 1);
        std::vector<std::uint32_t> buf(len);
        detail::read_pod(*c.file, buf.data(), buf.size());
        std::size_t pos = 0;
        Row r = Row::parse(side_.schema_, buf.data(), buf.size(), pos);
        c.head = {key_hash(side_.key_values(r)), std::move(r)};
      }
    }

    SpillSide& side_;
    std::vector<Cursor> cursors_;
  };

  void release_buffer() {
    bump(-static_cast<std::int64_t>(buffer_.size()));
    buffer_.clear();
    buffer_.shrink_to_fit();
  }

 private:
  void bump(std::int64_t d) {
    if (!current_) return;
    *current_ = static_cast<std::uint64_t>(static_cast<std::int64_t>(*current_) + d);
    if (peak_ && *current_ > *peak_) *peak_ = *current_;
  }

  static int stripe_of(std::uint64_t h) { return static_cast<int>(h >> 60); }

  void sort_buffer() {
    std::sort(buffer_.begin(), buffer_.end(), [&](const Row& a, const Row& b) {
      auto ka = key_values(a), kb = key_values(b);
      auto ha = key_hash(ka), hb = key_hash(kb);
      return std::tie(ha, ka) < std::tie(hb, kb);
    });
    // begins[s] = first index with stripe >= s.
    buffer_stripe_begins_.assign(kStripes + 1, buffer_.size());
    std::size_t i = 0;
    for (int s = 0; s <= kStripes; ++s) {
      while (i < buffer_.size() && stripe_of(key_hash(key_values(buffer_[i]))) < s) ++i;
      buffer_stripe_begins_[static_cast<std::size_t>(s)] = i;
    }
  }

  std::size_t buffer_stripe_begin(int s) const {
    return buffer_stripe_begins_.empty() ? 0 : buffer_stripe_begins_[static_cast<std::size_t>(s)];
  }

  void spill() {
    sort_buffer();
    RunFile run;
    run.path = dir_ / ("run-" + std::to_string(reinterpret_cast<std::uintptr_t>(this)) + "-" +
                       std::to_string(runs_.size()) + ".spill");
    std::ofstream os(run.path, std::ios::binary);
    if (!os) throw ExecError("cannot open spill file " + run.path.string());
    run.stripe_offsets.assign(kStripes, 0);
    run.stripe_counts.assign(kStripes, 0);
    std::vector<std::uint32_t> scratch;
    for (int s = 0; s < kStripes; ++s) {
      run.stripe_offsets[static_cast<std::size_t>(s)] = static_cast<std::uint64_t>(os.tellp());
      for (std::size_t i = buffer_stripe_begin(s); i < buffer_stripe_begin(s + 1); ++i) {
        scratch.clear();
        buffer_[i].serialize(scratch);
        std::uint32_t len = static_cast<std::uint32_t>(scratch.size());
        detail::write_pod(os, &len, 1);
        detail::write_pod(os, scratch.data(), scratch.size());
        run.stripe_counts[static_cast<std::size_t>(s)]++;
      }
    }
    if (!os) throw ExecError("spill write failed");
    bump(-static_cast<std::int64_t>(buffer_.size()));
    buffer_.clear();
    runs_.push_back(std::move(run));
  }

  struct RunFile {
    std::filesystem::path path;
    std::vector<std::uint64_t> stripe_offsets;
    std::vector<std::uint64_t> stripe_counts;
  };

  Schema schema_;
  std::vector<QVertex> key_;
  std::size_t threshold_;
  std::filesystem::path dir_;
  std::uint64_t* current_;
  std::uint64_t* peak_;
  std::vector<Row> buffer_;
  std::vector<std::size_t> buffer_stripe_begins_;
  std::vector<RunFile> runs_;
};

// Exact natural join of two keyed relations, processed one hash stripe and one
// key group at a time. Output rows interleave: concrete = left concrete then
// right's non-key concrete; arrays = left then right.
class HashJoiner {
 public:
  HashJoiner(const QueryGraph& q, Schema left, Schema right, std::vector<QVertex> key,
             std::size_t buffer_threshold, const MatchConstraints& cons, Counters& counters)
      : q_(q), cons_(cons), counters_(counters),
        dir_(make_spill_dir()),
        left_(std::move(left), key, buffer_threshold, dir_, &current_, &counters.join_peak_tuples),
        right_(std::move(right), key, buffer_threshold, dir_, &current_, &counters.join_peak_tuples),
        key_(std::move(key)) {
    out_schema_.concrete = left_.schema().concrete;
    for (QVertex v : right_.schema().concrete)
      if (out_schema_.concrete_pos(v) < 0) out_schema_.concrete.push_back(v);
    out_schema_.compressed = left_.schema().compressed;
    out_schema_.compressed.insert(out_schema_.compressed.end(), right_.schema().compressed.begin(),
                                  right_.schema().compressed.end());
  }

  ~HashJoiner() {
    std::error_code ec;
    std::filesystem::remove_all(dir_, ec);
  }

  const Schema& output_schema() const { return out_schema_; }

  void add_left(Row r) { left_.add(std::move(r)); }
  void add_right(Row r) { right_.add(std::move(r)); }

  // Emits joined rows, walking both sides one key group at a time. Peak
  // in-memory tuples stay below 2 * buffer_threshold + one output batch as
  // long as no single key group exceeds the threshold.
  template <typename Emit>
  void finish(Emit&& emit) {
    CompTimer t(counters_.comp_seconds);
    left_.seal();
    right_.seal();
    for (int stripe = 0; stripe < SpillSide::kStripes; ++stripe) {
      SpillSide::StripeStream ls(left_, stripe), rs(right_, stripe);
      auto lhead = ls.next();
      auto rhead = rs.next();
      auto lt = [&] { return std::make_pair(lhead->first, left_.key_values(lhead->second)); };
      auto rt = [&] { return std::make_pair(rhead->first, right_.key_values(rhead->second)); };
      while (lhead && rhead) {
        if (lt() < rt()) {
          lhead = ls.next();
          continue;
        }
        if (rt() < lt()) {
          rhead = rs.next();
          continue;
        }
        // Equal keys: gather both groups, cross-merge.
        const auto gkey = lt();
        std::vector<Row> lgroup, rgroup;
        while (lhead && lt() == gkey) {
          lgroup.push_back(std::move(lhead->second));
          lhead = ls.next();
        }
        while (rhead && rt() == gkey) {
          rgroup.push_back(std::move(rhead->second));
          rhead = rs.next();
        }
        track(lgroup.size() + rgroup.size());
        counters_.join_max_group_tuples =
            std::max<std::uint64_t>(counters_.join_max_group_tuples, lgroup.size() + rgroup.size());
        for (const Row& l : lgroup)
          for (const Row& r : rgroup)
            if (auto merged = merge(l, r)) emit(std::move(*merged));
      }
    }
    left_.release_buffer();
    right_.release_buffer();
  }

 private:
  static std::filesystem::path make_spill_dir() {
    static std::atomic<std::uint64_t> seq{0};
    auto dir = std::filesystem::temp_directory_path() /
               ("sgm-spill-" + std::to_string(::getpid()) + "-" + std::to_string(seq.fetch_add(1)));
    std::filesystem::create_directories(dir);
    return dir;
  }

  void track(std::size_t group_tuples) {
    std::uint64_t tot = current_ + group_tuples;
    if (tot > counters_.join_peak_tuples) counters_.join_peak_tuples = tot;
  }

  std::optional<Row> merge(const Row& l, const Row& r) {
    Row out;
    out.concrete = l.concrete;
    std::vector<VertexId> assign(static_cast<std::size_t>(q_.num_vertices()), kInvalidVertex);
    QVertexSet assigned = 0;
    for (std::size_t i = 0; i < l.concrete.size(); ++i) {
      assign[left_.schema().concrete[i]] = l.concrete[i];
      assigned |= QueryGraph::bit(left_.schema().concrete[i]);
    }
    for (std::size_t i = 0; i < r.concrete.size(); ++i) {
      QVertex v = right_.schema().concrete[i];
      if (assigned & QueryGraph::bit(v)) continue;  // key vertex, equal by construction
      // Injectivity across the two sides; each side is injective already.
      for (std::size_t j = 0; j < l.concrete.size(); ++j)
        if (l.concrete[j] == r.concrete[i]) return std::nullopt;
      assign[v] = r.concrete[i];
      assigned |= QueryGraph::bit(v);
      out.concrete.push_back(r.concrete[i]);
    }
    // Order pairs spanning the two sides (re-checking within-side pairs is
    // harmless).
    if (!detail::order_ok(cons_, assign, assigned)) return std::nullopt;
    out.arrays = l.arrays;
    out.arrays.insert(out.arrays.end(), r.arrays.begin(), r.arrays.end());
    return out;
  }

  const QueryGraph& q_;
  const MatchConstraints& cons_;
  Counters& counters_;
  std::uint64_t current_ = 0;
  std::filesystem::path dir_;
  SpillSide left_, right_;
  std::vector<QVertex> key_;
  Schema out_schema_;
};

// ---------------------------------------------------------------------------
// Worker context and engine

// Per-worker view during a run: the partition, the channel endpoint, and the
// metric accumulators. Workers only read their own partition.
struct WorkerCtx {
  std::uint32_t worker_id = 0;
  std::uint32_t num_workers = 1;
  Comm* comm = nullptr;
  const GraphPartition* partition = nullptr;  // null for FullRep/ShrCube phases
  const DataGraph* full_graph = nullptr;      // FullRep and the ShrCube router
  Counters counters;
  std::uint32_t stage_cursor = 0;  // workers advance identically

  std::uint32_t next_stage() { return stage_cursor++; }

  void barrier_stage() {
    const std::uint32_t s = next_stage();
    comm->close_stage(worker_id, s);
    while (comm->recv(worker_id, s)) {
    }
  }
};

// Runs `fn` on every worker local to the comm backend (threads in-process) and
// collects per-worker counters. Exceptions abort the whole run.
class Engine {
 public:
  explicit Engine(Comm& comm) : comm_(comm) {}

  template <typename Fn>
  std::vector<Counters> run(Fn&& fn) {
    const auto& locals = comm_.local_workers();
    std::vector<Counters> counters(comm_.num_workers());
    std::vector<std::thread> threads;
    std::mutex err_mu;
    std::exception_ptr first_error;

    for (std::uint32_t wid : locals) {
      threads.emplace_back([&, wid] {
        WorkerCtx ctx;
        ctx.worker_id = wid;
        ctx.num_workers = comm_.num_workers();
        ctx.comm = &comm_;
        auto start = std::chrono::steady_clock::now();
        try {
          fn(ctx);
        } catch (...) {
          std::lock_guard<std::mutex> lk(err_mu);
          if (!first_error) first_error = std::current_exception();
          comm_.abort_flag().raise(ResourceCapExceeded::Kind::Time, "worker failed");
        }
        ctx.counters.total_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        auto ch = comm_.counters(wid);
        ctx.counters.recv_integers = ch.recv_integers;
        ctx.counters.sent_integers = ch.sent_integers;
        counters[wid] = ctx.counters;
      });
    }
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
    return counters;
  }

 private:
  Comm& comm_;
};

// ---------------------------------------------------------------------------
// Batching driver

// Splits the candidate range of the batching vertex into sub-ranges of
// `batch_size` ids; sub-executions run sequentially and their outputs union
// to the unbatched output.
struct BatchRange {
  VertexId lo = 0;
  VertexId hi = 0;  // exclusive
  bool contains(VertexId v) const { return lo <= v && v < hi; }
};

inline std::vector<BatchRange> batch_ranges(VertexId universe, std::uint64_t batch_size,
                                            bool batching_enabled) {
  if (!batching_enabled || batch_size == 0 || batch_size >= universe)
    return {BatchRange{0, universe}};
  std::vector<BatchRange> out;
  for (VertexId lo = 0; lo < universe; lo = static_cast<VertexId>(lo + batch_size))
    out.push_back({lo, static_cast<VertexId>(std::min<std::uint64_t>(universe, lo + batch_size))});
  return out;
}

}  // namespace sgm
