#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "sgm/comm.hpp"
#include "sgm/common.hpp"
#include "sgm/graph.hpp"
#include "sgm/oracle.hpp"
#include "sgm/partition.hpp"
#include "sgm/plan.hpp"
#include "sgm/query.hpp"
#include "sgm/runtime.hpp"

namespace sgm {

enum class Strategy { BinJoin, WOptJoin, ShrCube, FullRep };

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::BinJoin: return "binjoin";
    case Strategy::WOptJoin: return "woptjoin";
    case Strategy::ShrCube: return "shrcube";
    case Strategy::FullRep: return "fullrep";
  }
  return "?";
}

inline std::optional<Strategy> strategy_from_name(const std::string& s) {
  if (s == "binjoin") return Strategy::BinJoin;
  if (s == "woptjoin") return Strategy::WOptJoin;
  if (s == "shrcube") return Strategy::ShrCube;
  if (s == "fullrep") return Strategy::FullRep;
  return std::nullopt;
}

struct StrategyConfig {
  Strategy strategy = Strategy::WOptJoin;
  // The three composable optimizations. ShrCube and FullRep ignore them.
  bool batching = true;
  bool trindexing = false;
  bool compression = false;
  std::uint64_t batch_size = 1'000'000;

  bool enumerate = false;                  // default is count-only
  std::string output_path;                 // enumerate mode: per-worker files <path>.w<k>.txt
  bool use_order = true;                   // dropped automatically for labelled queries
  std::size_t join_buffer_threshold = 1u << 20;
  CostMode cost_mode = CostMode::ER;
  bool ordered_triangle_partition = false; // tri-ordered storage variant
  std::optional<UnitMode> unit_mode_override;
  std::shared_ptr<BinJoinPlan> binjoin_plan_override;  // replay a dumped plan as-is
  std::shared_ptr<WOptOrder> wopt_order_override;
  bool inject_fault = false;               // test hook: drop one result tuple

  bool opts_apply() const {
    return strategy == Strategy::BinJoin || strategy == Strategy::WOptJoin;
  }
  UnitMode unit_mode() const {
    if (unit_mode_override) return *unit_mode_override;
    return trindexing ? UnitMode::CliqueAndStar : UnitMode::Star;
  }
};

struct RunResult {
  std::uint64_t count = 0;
  std::vector<Match> matches;             // filled when hooks.collect_matches
  std::vector<Counters> workers;
  std::vector<std::uint64_t> level_rows;  // WOptJoin: rows alive after each level
  double wall_seconds = 0;

  std::uint64_t total_sent() const {
    std::uint64_t s = 0;
    for (const auto& c : workers) s += c.sent_integers;
    return s;
  }
  std::uint64_t total_recv() const {
    std::uint64_t s = 0;
    for (const auto& c : workers) s += c.recv_integers;
    return s;
  }
};

struct RunHooks {
  bool collect_matches = false;
  // BinJoin test observer: called per worker with every materialized relation.
  std::function<void(int node, const Schema&, const std::vector<Row>&, std::uint32_t worker)>
      binjoin_observer;
};

namespace detail {

inline bool label_ok(const QueryGraph& q, const DataGraph& g, QVertex qv, VertexId u) {
  if (!q.labelled()) return true;
  Label want = q.label(qv);
  return want == kNoLabel || g.label(u) == want;
}

// Order pairs between a fixed target vertex and already-assigned concrete
// vertices; pairs touching unassigned or compressed vertices wait for
// decompression.
inline bool order_ok_for(const MatchConstraints& cons, QVertex target, VertexId value,
                         const std::vector<VertexId>& assign, QVertexSet assigned) {
  for (auto [a, b] : cons.order) {
    if (a == target && (assigned & QueryGraph::bit(b)) && !(value < assign[b])) return false;
    if (b == target && (assigned & QueryGraph::bit(a)) && !(assign[a] < value)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Local matching (FullRep, ShrCube): backtracking in the crystal-core order,
// candidates by intersecting matched neighbors.

template <typename View>
struct LocalMatcher {
  const QueryGraph& q;
  const View& view;
  const DataGraph* labels;  // label source (may be null for unlabelled)
  MatchConstraints cons;
  std::function<bool(VertexId)> seed_filter;                 // first-vertex restriction
  std::function<void(const std::vector<VertexId>&)> emit;    // full assignment by query vertex
  AbortFlag* abort = nullptr;

  void run() {
    WOptOrder order = crystal_order(q);
    std::vector<VertexId> assign(static_cast<std::size_t>(q.num_vertices()), kInvalidVertex);
    QVertexSet assigned = 0;
    match_level(order, 0, assign, assigned);
  }

 private:
  bool lab_ok(QVertex qv, VertexId u) const {
    if (!q.labelled() || !labels) return true;
    Label want = q.label(qv);
    return want == kNoLabel || labels->label(u) == want;
  }

  void match_level(const WOptOrder& order, std::size_t level, std::vector<VertexId>& assign,
                   QVertexSet& assigned) {
    if (level == order.order.size()) {
      emit(assign);
      return;
    }
    QVertex target = order.order[level];
    auto try_candidate = [&](VertexId c) {
      if (!lab_ok(target, c)) return;
      for (int j = 0; j < q.num_vertices(); ++j)
        if ((assigned & QueryGraph::bit(static_cast<QVertex>(j))) && assign[static_cast<std::size_t>(j)] == c)
          return;
      // All edges to matched vertices must exist.
      for (QVertex s : order.sources[level])
        if (!view.has_edge(assign[s], c)) return;
      if (!order_ok_for(cons, target, c, assign, assigned)) return;
      assign[target] = c;
      assigned |= QueryGraph::bit(target);
      match_level(order, level + 1, assign, assigned);
      assigned &= ~QueryGraph::bit(target);
      assign[target] = kInvalidVertex;
    };
    if (level == 0) {
      view.for_each_vertex([&](VertexId u) {
        if (abort) abort->check();
        if (seed_filter && !seed_filter(u)) return;
        try_candidate(u);
      });
      return;
    }
    // Iterate the smallest matched neighbor list.
    QVertex best = order.sources[level].front();
    for (QVertex s : order.sources[level])
      if (view.degree(assign[s]) < view.degree(assign[best])) best = s;
    for (VertexId c : view.neighbors(assign[best])) try_candidate(c);
  }
};

// Full-graph view for FullRep.
struct FullGraphView {
  const DataGraph& g;
  std::span<const VertexId> neighbors(VertexId u) const { return g.neighbors(u); }
  std::size_t degree(VertexId u) const { return g.degree(u); }
  bool has_edge(VertexId a, VertexId b) const { return g.has_edge(a, b); }
  template <typename F>
  void for_each_vertex(F&& f) const {
    for (VertexId u = 0; u < g.num_vertices(); ++u) f(u);
  }
};

// Deduplicated local graph assembled from routed edges (ShrCube).
struct LocalEdgeGraph {
  std::unordered_map<VertexId, std::vector<VertexId>> adj;

  void add_edge(VertexId a, VertexId b) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  void finalize() {
    for (auto& [u, nb] : adj) {
      std::sort(nb.begin(), nb.end());
      nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    }
  }
  std::span<const VertexId> neighbors(VertexId u) const {
    auto it = adj.find(u);
    if (it == adj.end()) return {};
    return {it->second.data(), it->second.size()};
  }
  std::size_t degree(VertexId u) const {
    auto it = adj.find(u);
    return it == adj.end() ? 0 : it->second.size();
  }
  bool has_edge(VertexId a, VertexId b) const {
    auto nb = neighbors(a);
    return std::binary_search(nb.begin(), nb.end(), b);
  }
  template <typename F>
  void for_each_vertex(F&& f) const {
    for (const auto& [u, nb] : adj) f(u);
  }
};

// ---------------------------------------------------------------------------
// Shared run state (one per run, read by all local workers)

struct MatchCollector {
  std::mutex mu;
  std::vector<Match> matches;
  std::atomic<std::uint64_t> count{0};
  std::atomic<bool> fault_pending{false};
  std::vector<std::unique_ptr<std::ofstream>> files;  // per-worker streams (enumerate mode)

  void open_files(const std::string& base, const std::vector<std::uint32_t>& workers,
                  std::uint32_t total) {
    files.resize(total);
    for (std::uint32_t wid : workers) {
      files[wid] = std::make_unique<std::ofstream>(base + ".w" + std::to_string(wid) + ".txt");
      if (!*files[wid]) throw ConfigError("cannot open result file for worker " + std::to_string(wid));
    }
  }

  void add(std::uint32_t worker, const std::vector<VertexId>& m, bool collect) {
    if (fault_pending.exchange(false)) return;  // injected fault: drop one tuple
    count.fetch_add(1, std::memory_order_relaxed);
    if (!files.empty() && files[worker]) {
      auto& os = *files[worker];
      for (std::size_t i = 0; i < m.size(); ++i) os << (i ? " " : "") << m[i];
      os << "\n";
    }
    if (collect) {
      std::lock_guard<std::mutex> lk(mu);
      matches.push_back(m);
    }
  }
};

struct RunEnv {
  const QueryGraph* q = nullptr;
  const DataGraph* g = nullptr;
  const std::vector<GraphPartition>* parts = nullptr;
  PartitionConfig pcfg;
  StrategyConfig cfg;
  MatchConstraints cons;
  const RunHooks* hooks = nullptr;

  BinJoinPlan bplan;
  WOptOrder worder;
  HypercubeShares shares;

  MatchCollector* collector = nullptr;
  std::vector<std::atomic<std::uint64_t>>* level_rows = nullptr;
  AbortFlag* abort = nullptr;
};

inline void sink_row(const RunEnv& env, std::uint32_t worker, const Schema& schema,
                     const Row& row) {
  const bool collect = env.hooks && env.hooks->collect_matches;
  if (schema.compressed.empty() && !collect && env.collector->files.empty()) {
    env.collector->add(worker, row.concrete, false);
    return;
  }
  std::function<void(const std::vector<VertexId>&)> cb =
      [&](const std::vector<VertexId>& m) { env.collector->add(worker, m, collect); };
  decompress_row(*env.q, schema, row, env.cons, &cb);
}

// ---------------------------------------------------------------------------
// WOptJoin

struct WOptLevelSchema {
  Schema schema;          // prefix schema before this level
  Schema next;            // schema after this level
  bool target_compressed = false;
};

inline Schema wopt_schema_upto(const WOptOrder& o, std::size_t levels, bool compression) {
  Schema s;
  for (std::size_t i = 0; i < levels; ++i) {
    if (compression && o.compressed[i]) s.compressed.push_back(o.order[i]);
    else s.concrete.push_back(o.order[i]);
  }
  return s;
}

// Wire records for the two routing passes of one level.
//   pass 1 (count):     [1, next, row..., deg_0..deg_{next-1}]
//   pass 2 (intersect): [2, next, row..., visit_0..visit_{k-1}, clen, cands...]
struct WOptRoute {
  std::uint32_t pass = 1;
  std::uint32_t next = 0;
  Row row;
  std::vector<std::uint32_t> degrees;  // pass 1
  std::vector<std::uint32_t> visit;    // pass 2
  std::vector<VertexId> cands;         // pass 2

  void serialize(std::size_t, std::vector<std::uint32_t>& out) const {
    out.push_back(pass);
    out.push_back(next);
    row.serialize(out);
    if (pass == 1) {
      out.insert(out.end(), degrees.begin(), degrees.end());
    } else {
      out.insert(out.end(), visit.begin(), visit.end());
      out.push_back(static_cast<std::uint32_t>(cands.size()));
      out.insert(out.end(), cands.begin(), cands.end());
    }
  }

  static WOptRoute parse(const Schema& schema, std::size_t k, const std::vector<std::uint32_t>& p,
                         std::size_t& pos) {
    WOptRoute r;
    r.pass = p.at(pos++);
    r.next = p.at(pos++);
    r.row = Row::parse(schema, p.data(), p.size(), pos);
    if (r.pass == 1) {
      for (std::uint32_t i = 0; i < r.next; ++i) r.degrees.push_back(p.at(pos++));
    } else {
      for (std::size_t i = 0; i < k; ++i) r.visit.push_back(p.at(pos++));
      std::uint32_t clen = p.at(pos++);
      for (std::uint32_t i = 0; i < clen; ++i) r.cands.push_back(p.at(pos++));
    }
    return r;
  }
};

inline VertexId row_value_of(const Schema& schema, const Row& row, QVertex v) {
  int pos = schema.concrete_pos(v);
  if (pos < 0) throw ExecError("prefix references compressed or unknown vertex");
  return row.concrete[static_cast<std::size_t>(pos)];
}

// Runs one (pass, hop) sub-stage across all workers. Returns rows finished at
// this worker (only on the final hop).
inline void wopt_run_level(WorkerCtx& ctx, const RunEnv& env, std::size_t level,
                           std::vector<Row>& rows) {
  const auto& o = env.worder;
  const QueryGraph& q = *env.q;
  const bool compression = env.cfg.compression;
  const Schema schema = wopt_schema_upto(o, level, compression);
  const QVertex target = o.order[level];
  const bool target_compressed = compression && o.compressed[level];

  // Groups: TrIndexing groups from the plan, else singletons.
  std::vector<std::vector<QVertex>> groups;
  if (env.cfg.trindexing && !o.groups.empty() && !o.groups[level].empty()) {
    groups = o.groups[level];
  } else {
    for (QVertex s : o.sources[level]) groups.push_back({s});
  }
  const std::size_t k = groups.size();
  const std::uint32_t base = ctx.stage_cursor;
  const std::size_t hops = (k == 1) ? 1 : 2 * k;  // single group: skip the count pass
  ctx.stage_cursor += static_cast<std::uint32_t>(hops);

  const auto& part = *env.parts;
  auto owner = [&](VertexId u) { return env.pcfg.owner_of(u); };
  const GraphPartition& mine = part[ctx.worker_id];

  // Candidate filtering against the concrete prefix at the final hop.
  auto finalize = [&](Row&& row, std::vector<VertexId>&& cands, std::vector<Row>& out) {
    std::vector<VertexId> assign(static_cast<std::size_t>(q.num_vertices()), kInvalidVertex);
    QVertexSet assigned = 0;
    for (std::size_t i = 0; i < schema.concrete.size(); ++i) {
      assign[schema.concrete[i]] = row.concrete[i];
      assigned |= QueryGraph::bit(schema.concrete[i]);
    }
    std::vector<VertexId> keep;
    keep.reserve(cands.size());
    for (VertexId c : cands) {
      bool dup = false;
      for (VertexId v : row.concrete)
        if (v == c) {
          dup = true;
          break;
        }
      if (dup) continue;
      if (!label_ok(q, *env.g, target, c)) continue;
      if (!order_ok_for(env.cons, target, c, assign, assigned)) continue;
      keep.push_back(c);
    }
    if (keep.empty()) return;
    if (target_compressed) {
      row.arrays.push_back(std::move(keep));
      out.push_back(std::move(row));
    } else {
      for (VertexId c : keep) {
        Row r = row;
        r.concrete.push_back(c);
        out.push_back(std::move(r));
      }
    }
  };

  // Intersect the candidate set at the owner of group root x: the owned full
  // list of f(x), then each in-group member via locally resolvable edges.
  auto intersect_group = [&](const Row& row, const std::vector<QVertex>& group,
                             std::optional<std::vector<VertexId>> cands) {
    VertexId fx = row_value_of(schema, row, group[0]);
    auto nb = mine.owned_neighbors(fx);
    std::vector<VertexId> out;
    if (!cands) {
      out.assign(nb.begin(), nb.end());
    } else {
      out.reserve(std::min(cands->size(), nb.size()));
      std::set_intersection(cands->begin(), cands->end(), nb.begin(), nb.end(),
                            std::back_inserter(out));
    }
    for (std::size_t gi = 1; gi < group.size(); ++gi) {
      VertexId fy = row_value_of(schema, row, group[gi]);
      std::vector<VertexId> filtered;
      filtered.reserve(out.size());
      for (VertexId c : out)
        if (mine.has_local_edge(fy, c)) filtered.push_back(c);
      out.swap(filtered);
    }
    return out;
  };

  std::vector<Row> finished;

  if (k == 1) {
    // Single hop: propose + intersect at the group owner.
    {
      BufferedSender sender(*ctx.comm, ctx.worker_id, base);
      std::vector<std::uint32_t> buf;
      for (auto& row : rows) {
        WOptRoute route;
        route.pass = 2;
        route.next = 0;
        route.visit = {0};
        route.row = std::move(row);
        buf.clear();
        route.serialize(k, buf);
        sender.append_record(owner(row_value_of(schema, route.row, groups[0][0])), buf);
      }
      sender.flush_all();
    }
    ctx.comm->close_stage(ctx.worker_id, base);
    rows.clear();
    while (auto m = ctx.comm->recv(ctx.worker_id, base)) {
      CompTimer t(ctx.counters.comp_seconds);
      std::size_t pos = 0;
      while (pos < m->payload.size()) {
        WOptRoute route = WOptRoute::parse(schema, k, m->payload, pos);
        auto cands = intersect_group(route.row, groups[0], std::nullopt);
        finalize(std::move(route.row), std::move(cands), finished);
      }
    }
    rows = std::move(finished);
    return;
  }

  // Seed the count pass.
  {
    BufferedSender sender(*ctx.comm, ctx.worker_id, base);
    std::vector<std::uint32_t> buf;
    for (auto& row : rows) {
      WOptRoute route;
      route.pass = 1;
      route.next = 0;
      route.row = std::move(row);
      buf.clear();
      route.serialize(k, buf);
      sender.append_record(owner(row_value_of(schema, route.row, groups[0][0])), buf);
    }
    sender.flush_all();
  }
  ctx.comm->close_stage(ctx.worker_id, base);
  rows.clear();

  for (std::size_t hop = 0; hop < hops; ++hop) {
    const std::uint32_t stage = base + static_cast<std::uint32_t>(hop);
    const std::uint32_t next_stage = stage + 1;
    std::optional<BufferedSender> sender;
    if (hop + 1 < hops) sender.emplace(*ctx.comm, ctx.worker_id, next_stage);
    std::vector<std::uint32_t> buf;

    while (auto m = ctx.comm->recv(ctx.worker_id, stage)) {
      CompTimer t(ctx.counters.comp_seconds);
      std::size_t pos = 0;
      while (pos < m->payload.size()) {
        WOptRoute route = WOptRoute::parse(schema, k, m->payload, pos);
        if (route.pass == 1) {
          // Count: record the degree of this group's root.
          VertexId fx = row_value_of(schema, route.row, groups[route.next][0]);
          route.degrees.push_back(static_cast<std::uint32_t>(mine.owned_neighbors(fx).size()));
          route.next++;
          if (route.next < k) {
            buf.clear();
            route.serialize(k, buf);
            sender->append_record(owner(row_value_of(schema, route.row, groups[route.next][0])), buf);
          } else {
            // Propose from the smallest collected list first.
            WOptRoute p2;
            p2.pass = 2;
            p2.next = 0;
            p2.row = std::move(route.row);
            p2.visit.resize(k);
            std::iota(p2.visit.begin(), p2.visit.end(), 0);
            std::stable_sort(p2.visit.begin(), p2.visit.end(), [&](std::uint32_t a, std::uint32_t b) {
              return route.degrees[a] < route.degrees[b];
            });
            buf.clear();
            p2.serialize(k, buf);
            sender->append_record(owner(row_value_of(schema, p2.row, groups[p2.visit[0]][0])), buf);
          }
        } else {
          const auto& group = groups[route.visit[route.next]];
          std::optional<std::vector<VertexId>> prior;
          if (route.next > 0) prior = std::move(route.cands);
          auto cands = intersect_group(route.row, group, std::move(prior));
          route.next++;
          if (route.next < k && !cands.empty()) {
            route.cands = std::move(cands);
            buf.clear();
            route.serialize(k, buf);
            sender->append_record(owner(row_value_of(schema, route.row, groups[route.visit[route.next]][0])), buf);
          } else if (route.next == k) {
            finalize(std::move(route.row), std::move(cands), finished);
          }
        }
      }
    }
    if (sender) sender->flush_all();
    if (hop + 1 < hops) ctx.comm->close_stage(ctx.worker_id, next_stage);
  }
  rows = std::move(finished);
}

inline void run_woptjoin_worker(WorkerCtx& ctx, const RunEnv& env) {
  const QueryGraph& q = *env.q;
  const auto& o = env.worder;
  const int n = q.num_vertices();
  const GraphPartition& mine = (*env.parts)[ctx.worker_id];
  const Schema final_schema = wopt_schema_upto(o, static_cast<std::size_t>(n), env.cfg.compression);

  auto ranges = batch_ranges(env.g->num_vertices(), env.cfg.batch_size, env.cfg.batching);
  for (const auto& range : ranges) {
    std::vector<Row> rows;
    {
      CompTimer t(ctx.counters.comp_seconds);
      for (VertexId u : mine.owned) {
        if (!range.contains(u)) continue;
        if (!label_ok(q, *env.g, o.order[0], u)) continue;
        rows.push_back(Row{{u}, {}});
      }
    }
    if (env.level_rows)
      (*env.level_rows)[0].fetch_add(rows.size(), std::memory_order_relaxed);
    for (int level = 1; level < n; ++level) {
      wopt_run_level(ctx, env, static_cast<std::size_t>(level), rows);
      if (env.level_rows)
        (*env.level_rows)[static_cast<std::size_t>(level)].fetch_add(rows.size(),
                                                                     std::memory_order_relaxed);
    }
    {
      CompTimer t(ctx.counters.comp_seconds);
      for (const Row& row : rows) sink_row(env, ctx.worker_id, final_schema, row);
    }
  }
}

// ---------------------------------------------------------------------------
// BinJoin

// Node schema: concrete vertices ascending, then compressed ascending.
inline Schema binjoin_node_schema(const BinJoinPlan& plan, int node) {
  const auto& nd = plan.nodes[static_cast<std::size_t>(node)];
  Schema s;
  for (QVertex v = 0; v < kMaxQueryVertices; ++v) {
    if (!(nd.verts & QueryGraph::bit(v))) continue;
    if (nd.compressed & QueryGraph::bit(v)) s.compressed.push_back(v);
    else s.concrete.push_back(v);
  }
  return s;
}

// Star unit: all injective leaf assignments inside the owned adjacency of
// each root candidate. Compressed leaves become candidate arrays.
inline void enumerate_star(const RunEnv& env, const GraphPartition& mine, const JoinUnit& unit,
                           QVertexSet compressed, const std::optional<BatchRange>& range,
                           QVertex batching_vertex, std::vector<Row>& out) {
  const QueryGraph& q = *env.q;
  std::vector<QVertex> concrete_leaves, array_leaves;
  QVertexSet ls = unit.vertices & ~QueryGraph::bit(unit.root);
  while (ls) {
    QVertex l = static_cast<QVertex>(std::countr_zero(ls));
    ls &= ls - 1;
    if (compressed & QueryGraph::bit(l)) array_leaves.push_back(l);
    else concrete_leaves.push_back(l);
  }
  // Schema: concrete ascending = root+leaves sorted; build positions.
  std::vector<QVertex> schema_concrete{unit.root};
  schema_concrete.insert(schema_concrete.end(), concrete_leaves.begin(), concrete_leaves.end());
  std::sort(schema_concrete.begin(), schema_concrete.end());

  auto in_range = [&](QVertex v, VertexId u) {
    return !range || v != batching_vertex || range->contains(u);
  };

  std::vector<VertexId> assign(static_cast<std::size_t>(q.num_vertices()), kInvalidVertex);
  for (VertexId root_u : mine.owned) {
    if (env.abort) env.abort->check();
    if (!label_ok(q, *env.g, unit.root, root_u) || !in_range(unit.root, root_u)) continue;
    auto nb = mine.owned_neighbors(root_u);
    QVertexSet assigned = QueryGraph::bit(unit.root);
    assign[unit.root] = root_u;

    auto rec = [&](auto&& self, std::size_t li) -> void {
      if (li == concrete_leaves.size()) {
        Row row;
        row.concrete.reserve(schema_concrete.size());
        for (QVertex v : schema_concrete) row.concrete.push_back(assign[v]);
        bool viable = true;
        for (QVertex av : array_leaves) {
          std::vector<VertexId> cand;
          for (VertexId c : nb) {
            if (c == root_u) continue;
            bool dup = false;
            for (QVertex cv : concrete_leaves)
              if (assign[cv] == c) {
                dup = true;
                break;
              }
            if (dup) continue;
            if (!label_ok(q, *env.g, av, c) || !in_range(av, c)) continue;
            if (!order_ok_for(env.cons, av, c, assign, assigned)) continue;
            cand.push_back(c);
          }
          if (cand.empty()) {
            viable = false;
            break;
          }
          row.arrays.push_back(std::move(cand));
        }
        if (viable) out.push_back(std::move(row));
        return;
      }
      QVertex lv = concrete_leaves[li];
      for (VertexId c : nb) {
        if (c == root_u) continue;
        bool dup = false;
        for (std::size_t j = 0; j < li; ++j)
          if (assign[concrete_leaves[j]] == c) {
            dup = true;
            break;
          }
        if (dup) continue;
        if (!label_ok(q, *env.g, lv, c) || !in_range(lv, c)) continue;
        if (!order_ok_for(env.cons, lv, c, assign, assigned)) continue;
        assign[lv] = c;
        assigned |= QueryGraph::bit(lv);
        self(self, li + 1);
        assigned &= ~QueryGraph::bit(lv);
        assign[lv] = kInvalidVertex;
      }
    };
    rec(rec, 0);
    assign[unit.root] = kInvalidVertex;
  }
}

// Clique unit: enumerate data cliques anchored at their minimum (owned)
// vertex, then all label/order-feasible bijections of the query clique onto
// the instance. With compression, the trailing vertex is kept as the common
// neighborhood array (requires the unordered triangle overlay).
inline void enumerate_clique(const RunEnv& env, const GraphPartition& mine, const JoinUnit& unit,
                             QVertexSet compressed, const std::optional<BatchRange>& range,
                             QVertex batching_vertex, std::vector<Row>& out) {
  const QueryGraph& q = *env.q;
  std::vector<QVertex> members;
  QVertexSet vs = unit.vertices;
  while (vs) {
    members.push_back(static_cast<QVertex>(std::countr_zero(vs)));
    vs &= vs - 1;
  }
  const std::size_t k = members.size();
  std::optional<QVertex> array_vertex;
  if (compressed) array_vertex = static_cast<QVertex>(std::countr_zero(compressed));
  const std::size_t concrete_k = k - (array_vertex ? 1 : 0);

  std::vector<QVertex> concrete_members;
  for (QVertex v : members)
    if (!array_vertex || v != *array_vertex) concrete_members.push_back(v);

  auto in_range = [&](QVertex v, VertexId u) {
    return !range || v != batching_vertex || range->contains(u);
  };

  std::vector<VertexId> clique;  // ascending data clique instance
  std::vector<VertexId> assign(static_cast<std::size_t>(q.num_vertices()), kInvalidVertex);

  // All feasible bijections of the concrete query members onto the instance.
  auto emit_assignments = [&](const std::vector<VertexId>& inst) {
    std::vector<bool> used(inst.size(), false);
    auto rec = [&](auto&& self, std::size_t qi, QVertexSet assigned) -> void {
      if (qi == concrete_members.size()) {
        Row row;
        for (QVertex v : concrete_members) row.concrete.push_back(assign[v]);
        // Schema order is ascending; concrete_members already ascends.
        if (array_vertex) {
          std::vector<VertexId> cand;
          VertexId anchor = inst[0];
          for (VertexId c : mine.owned_neighbors(anchor)) {
            bool member = false;
            for (VertexId m : inst)
              if (m == c) member = true;
            if (member) continue;
            bool adj_all = true;
            for (VertexId m : inst)
              if (m != anchor && !mine.has_local_edge(m, c)) {
                adj_all = false;
                break;
              }
            if (!adj_all) continue;
            if (!label_ok(q, *env.g, *array_vertex, c) || !in_range(*array_vertex, c)) continue;
            if (!order_ok_for(env.cons, *array_vertex, c, assign, assigned)) continue;
            cand.push_back(c);
          }
          if (cand.empty()) return;
          row.arrays.push_back(std::move(cand));
        }
        out.push_back(std::move(row));
        return;
      }
      QVertex v = concrete_members[qi];
      for (std::size_t ii = 0; ii < inst.size(); ++ii) {
        if (used[ii]) continue;
        VertexId u = inst[ii];
        if (!label_ok(q, *env.g, v, u) || !in_range(v, u)) continue;
        if (!order_ok_for(env.cons, v, u, assign, assigned)) continue;
        used[ii] = true;
        assign[v] = u;
        self(self, qi + 1, assigned | QueryGraph::bit(v));
        assign[v] = kInvalidVertex;
        used[ii] = false;
      }
    };
    rec(rec, 0, 0);
  };

  // DFS over ascending candidates that stay mutually adjacent.
  auto grow = [&](auto&& self, std::vector<VertexId>& common) -> void {
    if (clique.size() == concrete_k) {
      emit_assignments(clique);
      return;
    }
    for (std::size_t i = 0; i < common.size(); ++i) {
      VertexId c = common[i];
      std::vector<VertexId> next;
      for (std::size_t j = i + 1; j < common.size(); ++j)
        if (mine.has_local_edge(c, common[j])) next.push_back(common[j]);
      clique.push_back(c);
      self(self, next);
      clique.pop_back();
    }
  };

  for (VertexId u : mine.owned) {
    if (env.abort) env.abort->check();
    auto nb = mine.owned_neighbors(u);
    std::vector<VertexId> common;
    for (VertexId c : nb)
      if (c > u) common.push_back(c);
    clique.assign(1, u);
    grow(grow, common);
    clique.clear();
  }
}

inline void run_binjoin_worker(WorkerCtx& ctx, const RunEnv& env) {
  const QueryGraph& q = *env.q;
  const auto& plan = env.bplan;
  const GraphPartition& mine = (*env.parts)[ctx.worker_id];
  const std::uint32_t w = ctx.num_workers;

  auto ranges = batch_ranges(env.g->num_vertices(), env.cfg.batch_size, env.cfg.batching);
  QVertex bv = plan.batching_vertex.value_or(0);

  for (const auto& range : ranges) {
    std::optional<BatchRange> restrict_range;
    if (ranges.size() > 1 && plan.batching_vertex) restrict_range = range;

    std::vector<std::vector<Row>> relation(plan.nodes.size());
    for (std::size_t node = 0; node < plan.nodes.size(); ++node) {
      const auto& nd = plan.nodes[node];
      Schema schema = binjoin_node_schema(plan, static_cast<int>(node));
      if (nd.left < 0) {
        CompTimer t(ctx.counters.comp_seconds);
        const bool unit_has_bv = (nd.verts & QueryGraph::bit(bv)) != 0;
        auto unit_range = unit_has_bv ? restrict_range : std::nullopt;
        if (nd.unit.kind == JoinUnit::Kind::Star)
          enumerate_star(env, mine, nd.unit, nd.compressed, unit_range, bv, relation[node]);
        else
          enumerate_clique(env, mine, nd.unit, nd.compressed, unit_range, bv, relation[node]);
      } else {
        // Shuffle both children by the join key, then local buffer-and-batch join.
        std::vector<QVertex> key;
        QVertexSet ks = nd.key;
        while (ks) {
          key.push_back(static_cast<QVertex>(std::countr_zero(ks)));
          ks &= ks - 1;
        }
        Schema ls = binjoin_node_schema(plan, nd.left);
        Schema rs = binjoin_node_schema(plan, nd.right);
        HashJoiner joiner(q, ls, rs, key, env.cfg.join_buffer_threshold, env.cons, ctx.counters);

        const std::uint32_t stage = ctx.next_stage();
        {
          BufferedSender sender(*ctx.comm, ctx.worker_id, stage);
          std::vector<std::uint32_t> buf;
          auto ship = [&](int child, std::uint32_t side) {
            const Schema& cs = side == 0 ? ls : rs;
            for (auto& row : relation[static_cast<std::size_t>(child)]) {
              std::vector<VertexId> kv;
              for (QVertex v : key) kv.push_back(row_value_of(cs, row, v));
              buf.clear();
              buf.push_back(side);
              row.serialize(buf);
              sender.append_record(static_cast<std::uint32_t>(key_hash(kv) % w), buf);
            }
            relation[static_cast<std::size_t>(child)].clear();
          };
          ship(nd.left, 0);
          ship(nd.right, 1);
          sender.flush_all();
        }
        ctx.comm->close_stage(ctx.worker_id, stage);
        while (auto m = ctx.comm->recv(ctx.worker_id, stage)) {
          std::size_t pos = 0;
          while (pos < m->payload.size()) {
            std::uint32_t side = m->payload[pos++];
            Row row = Row::parse(side == 0 ? ls : rs, m->payload.data(), m->payload.size(), pos);
            if (side == 0) joiner.add_left(std::move(row));
            else joiner.add_right(std::move(row));
          }
        }
        joiner.finish([&](Row row) { relation[node].push_back(std::move(row)); });
        // The joiner's output schema matches binjoin_node_schema up to vertex
        // order; normalize to ascending for upstream shuffles.
        const Schema& js = joiner.output_schema();
        if (js.concrete != schema.concrete || js.compressed != schema.compressed) {
          CompTimer t(ctx.counters.comp_seconds);
          for (auto& row : relation[node]) {
            Row fixed;
            fixed.concrete.reserve(schema.concrete.size());
            for (QVertex v : schema.concrete)
              fixed.concrete.push_back(row.concrete[static_cast<std::size_t>(js.concrete_pos(v))]);
            for (QVertex v : schema.compressed) {
              auto it = std::find(js.compressed.begin(), js.compressed.end(), v);
              fixed.arrays.push_back(std::move(row.arrays[static_cast<std::size_t>(it - js.compressed.begin())]));
            }
            row = std::move(fixed);
          }
        }
      }
      if (env.hooks && env.hooks->binjoin_observer)
        env.hooks->binjoin_observer(static_cast<int>(node), schema, relation[node], ctx.worker_id);
    }
    {
      CompTimer t(ctx.counters.comp_seconds);
      Schema root_schema = binjoin_node_schema(plan, plan.root);
      for (const Row& row : relation[static_cast<std::size_t>(plan.root)])
        sink_row(env, ctx.worker_id, root_schema, row);
    }
  }
}

// ---------------------------------------------------------------------------
// ShrCube

inline std::vector<std::uint32_t> shrcube_strides(const HypercubeShares& shares) {
  std::vector<std::uint32_t> strides(shares.buckets.size(), 1);
  for (int i = static_cast<int>(shares.buckets.size()) - 2; i >= 0; --i)
    strides[static_cast<std::size_t>(i)] =
        strides[static_cast<std::size_t>(i) + 1] * shares.buckets[static_cast<std::size_t>(i) + 1];
  return strides;
}

inline void run_shrcube_worker(WorkerCtx& ctx, const RunEnv& env) {
  const QueryGraph& q = *env.q;
  const auto& shares = env.shares;
  const std::uint32_t used = shares.used_workers();
  const auto strides = shrcube_strides(shares);
  const int n = q.num_vertices();
  auto h = [&](int dim, VertexId u) { return u % shares.buckets[static_cast<std::size_t>(dim)]; };

  // Route every owned directed edge, for every query edge, to all matching
  // worker tuples (remaining coordinates iterate their buckets).
  const std::uint32_t stage = ctx.next_stage();
  {
    CompTimer t(ctx.counters.comp_seconds);
    BufferedSender sender(*ctx.comm, ctx.worker_id, stage);
    const GraphPartition& mine = (*env.parts)[ctx.worker_id];
    std::vector<int> free_dims;
    for (VertexId u : mine.owned) {
      for (VertexId v : mine.owned_neighbors(u)) {
        for (auto [qa, qb] : q.edges()) {
          std::uint32_t fixed = h(qa, u) * strides[qa] + h(qb, v) * strides[qb];
          free_dims.clear();
          for (int d = 0; d < n; ++d)
            if (d != qa && d != qb) free_dims.push_back(d);
          // Iterate the free coordinates.
          std::vector<std::uint32_t> z(free_dims.size(), 0);
          for (;;) {
            std::uint32_t dst = fixed;
            for (std::size_t i = 0; i < free_dims.size(); ++i)
              dst += z[i] * strides[static_cast<std::size_t>(free_dims[i])];
            sender.append(dst, {u, v});
            std::size_t carry = 0;
            while (carry < z.size()) {
              if (++z[carry] < shares.buckets[static_cast<std::size_t>(free_dims[carry])]) break;
              z[carry++] = 0;
            }
            if (carry == z.size()) break;
          }
        }
      }
    }
    sender.flush_all();
  }
  ctx.comm->close_stage(ctx.worker_id, stage);

  detail::LocalEdgeGraph local;
  std::vector<std::pair<VertexId, VertexId>> seen;
  while (auto m = ctx.comm->recv(ctx.worker_id, stage)) {
    ctx.counters.received_edge_ints += m->payload.size();
    CompTimer t(ctx.counters.comp_seconds);
    for (std::size_t i = 0; i + 1 < m->payload.size(); i += 2) {
      VertexId a = m->payload[i], b = m->payload[i + 1];
      seen.emplace_back(std::min(a, b), std::max(a, b));
    }
  }
  {
    CompTimer t(ctx.counters.comp_seconds);
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
    for (auto [a, b] : seen) local.add_edge(a, b);
    local.finalize();
    ctx.counters.local_graph_edges = seen.size();
  }

  // Decode my coordinates; workers beyond the used cube hold no share.
  if (ctx.worker_id < used) {
    CompTimer t(ctx.counters.comp_seconds);
    std::vector<std::uint32_t> me(static_cast<std::size_t>(n));
    std::uint32_t rem = ctx.worker_id;
    for (int d = 0; d < n; ++d) {
      me[static_cast<std::size_t>(d)] = rem / strides[static_cast<std::size_t>(d)];
      rem %= strides[static_cast<std::size_t>(d)];
    }
    detail::LocalMatcher<detail::LocalEdgeGraph> matcher{
        q, local, env.g, env.cons, nullptr,
        [&](const std::vector<VertexId>& assign) {
          ctx.counters.computed_before_dedup++;
          // Retention: my coordinates must equal the hash of every mapped
          // vertex (the per-edge condition collapses to this).
          for (int d = 0; d < n; ++d)
            if (me[static_cast<std::size_t>(d)] != h(d, assign[static_cast<std::size_t>(d)])) return;
          env.collector->add(ctx.worker_id, assign, env.hooks && env.hooks->collect_matches);
        },
        &ctx.comm->abort_flag()};
    matcher.run();
  }
}

// ---------------------------------------------------------------------------
// FullRep

inline void run_fullrep_worker(WorkerCtx& ctx, const RunEnv& env) {
  CompTimer t(ctx.counters.comp_seconds);
  const std::uint32_t w = ctx.num_workers;
  const std::uint32_t me = ctx.worker_id;
  detail::FullGraphView view{*env.g};
  detail::LocalMatcher<detail::FullGraphView> matcher{
      *env.q, view, env.g, env.cons,
      [&](VertexId u) { return u % w == me; },
      [&](const std::vector<VertexId>& assign) {
        env.collector->add(me, assign, env.hooks && env.hooks->collect_matches);
      },
      &ctx.comm->abort_flag()};
  matcher.run();
  ctx.counters.matching_recv_integers = ctx.comm->counters(me).recv_integers;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Entry point

// Plans and executes one query. Partitions may be passed in (e.g. restored
// from files); otherwise they are built to match the configuration.
inline RunResult run_query(Comm& comm, const QueryGraph& q, const DataGraph& g,
                           StrategyConfig cfg, const RunHooks* hooks = nullptr,
                           const std::vector<GraphPartition>* prebuilt_parts = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  if (!q.connected()) throw ConfigError("query graph must be connected");
  if (q.labelled()) cfg.use_order = false;

  detail::RunEnv env;
  env.q = &q;
  env.g = &g;
  env.cfg = cfg;
  env.hooks = hooks;
  env.cons.q = &q;
  if (cfg.use_order) env.cons.order = symmetry_break_order(q);

  CostModel model = cfg.cost_mode == CostMode::ER ? CostModel::er(stats(g)) : CostModel::degree_stats(g);

  std::vector<GraphPartition> parts_storage;
  const std::uint32_t w = comm.num_workers();
  env.pcfg.num_workers = w;

  auto ensure_parts = [&](PartitionMode mode) {
    env.pcfg.mode = mode;
    if (prebuilt_parts) {
      if (prebuilt_parts->size() != w) throw ConfigError("partition count != worker count");
      for (const auto& p : *prebuilt_parts) {
        if (p.config.mode != mode)
          throw ConfigError(std::string("run needs ") + partition_mode_name(mode) +
                            " partitions, got " + partition_mode_name(p.config.mode));
      }
      env.pcfg = (*prebuilt_parts)[0].config;
      env.parts = prebuilt_parts;
      return;
    }
    parts_storage = GraphPartition::build(g, env.pcfg);
    env.parts = &parts_storage;
  };

  switch (cfg.strategy) {
    case Strategy::BinJoin: {
      const bool replay = cfg.binjoin_plan_override != nullptr;
      env.bplan = replay ? *cfg.binjoin_plan_override
                         : optimal_binjoin_plan(q, cfg.unit_mode(), model);
      bool has_clique = false;
      for (int l : env.bplan.leaves())
        if (env.bplan.nodes[static_cast<std::size_t>(l)].unit.kind == JoinUnit::Kind::Clique)
          has_clique = true;
      if (has_clique && !cfg.trindexing)
        throw ConfigError("clique join units require the triangle partition (trindexing)");
      if (!replay) {
        select_batching_vertex(env.bplan);
        if (cfg.compression) annotate_binjoin_compression(q, env.bplan);
      }
      if (cfg.ordered_triangle_partition) {
        // The ordered overlay cannot resolve closing edges below the anchor,
        // which clique-array candidates need.
        for (auto& nd : env.bplan.nodes)
          if (nd.left < 0 && nd.unit.kind == JoinUnit::Kind::Clique) nd.compressed = 0;
        for (auto& nd : env.bplan.nodes)  // nodes are in post-order
          if (nd.left >= 0)
            nd.compressed = env.bplan.nodes[static_cast<std::size_t>(nd.left)].compressed |
                            env.bplan.nodes[static_cast<std::size_t>(nd.right)].compressed;
      }
      if (!cfg.compression)
        for (auto& nd : env.bplan.nodes) nd.compressed = 0;
      ensure_parts(cfg.trindexing
                       ? (cfg.ordered_triangle_partition ? PartitionMode::TriangleOrdered
                                                         : PartitionMode::Triangle)
                       : PartitionMode::Hash);
      break;
    }
    case Strategy::WOptJoin: {
      // The crystal plan only pays off through compression.
      if (cfg.wopt_order_override) env.worder = *cfg.wopt_order_override;
      else env.worder = cfg.compression ? choose_wopt_order(q) : greedy_matching_order(q);
      if (!cfg.compression)
        env.worder.compressed.assign(env.worder.order.size(), false);
      if (cfg.trindexing)
        annotate_wopt_groups(q, env.worder, cfg.ordered_triangle_partition, env.cons.order);
      ensure_parts(cfg.trindexing
                       ? (cfg.ordered_triangle_partition ? PartitionMode::TriangleOrdered
                                                         : PartitionMode::Triangle)
                       : PartitionMode::Hash);
      break;
    }
    case Strategy::ShrCube: {
      env.shares = hypercube_shares(q, w, model);
      if (env.shares.used_workers() > w) throw ConfigError("hypercube shares exceed worker count");
      ensure_parts(PartitionMode::Hash);  // the distributed router reads hash partitions
      break;
    }
    case Strategy::FullRep:
      break;  // full replica, no partitions
  }

  env.abort = &comm.abort_flag();
  detail::MatchCollector collector;
  if (cfg.inject_fault) collector.fault_pending = true;
  if (cfg.enumerate && !cfg.output_path.empty())
    collector.open_files(cfg.output_path, comm.local_workers(), comm.num_workers());
  env.collector = &collector;

  std::vector<std::atomic<std::uint64_t>> level_rows(
      cfg.strategy == Strategy::WOptJoin ? q.num_vertices() : 0);
  env.level_rows = level_rows.empty() ? nullptr : &level_rows;

  comm.reset_counters();
  Engine engine(comm);
  RunResult result;
  result.workers = engine.run([&](WorkerCtx& ctx) {
    switch (env.cfg.strategy) {
      case Strategy::BinJoin: detail::run_binjoin_worker(ctx, env); break;
      case Strategy::WOptJoin: detail::run_woptjoin_worker(ctx, env); break;
      case Strategy::ShrCube: detail::run_shrcube_worker(ctx, env); break;
      case Strategy::FullRep: detail::run_fullrep_worker(ctx, env); break;
    }
  });

  // Multi-process runs: fold each process's local total into global worker 0.
  // Runs after the matching phase, so it does not disturb the phase metrics.
  if (comm.local_workers().size() != comm.num_workers()) {
    const std::uint32_t gather_stage = 0xFFFFFF00u;
    Engine gather(comm);
    const std::uint32_t first_local = comm.local_workers().front();
    std::atomic<std::uint64_t> global_count{0};
    gather.run([&](WorkerCtx& ctx) {
      if (ctx.worker_id == first_local) {
        std::uint64_t c = collector.count.load();
        comm.send(ctx.worker_id, 0, gather_stage,
                  {static_cast<std::uint32_t>(c >> 32), static_cast<std::uint32_t>(c)});
      }
      comm.close_stage(ctx.worker_id, gather_stage);
      while (auto m = comm.recv(ctx.worker_id, gather_stage)) {
        if (ctx.worker_id == 0 && m->payload.size() == 2)
          global_count.fetch_add((static_cast<std::uint64_t>(m->payload[0]) << 32) | m->payload[1]);
      }
    });
    if (first_local == 0) collector.count.store(global_count.load());
  }

  result.count = collector.count.load();
  if (hooks && hooks->collect_matches) {
    result.matches = std::move(collector.matches);
    std::sort(result.matches.begin(), result.matches.end());
  }
  result.level_rows.assign(level_rows.size(), 0);
  for (std::size_t i = 0; i < level_rows.size(); ++i) result.level_rows[i] = level_rows[i].load();
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace sgm
