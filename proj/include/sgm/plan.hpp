#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "sgm/common.hpp"
#include "sgm/graph.hpp"
#include "sgm/query.hpp"

namespace sgm {

// ---------------------------------------------------------------------------
// Cost model

enum class CostMode { ER, DegreeStats };

// Cardinality estimator. ER mode prices a pattern as N^|V| * p^|E| with
// p = 2M/N^2; degree-stats mode replaces star estimates with the exact
// sum over data vertices of falling(d(u), k).
struct CostModel {
  CostMode mode = CostMode::ER;
  double n = 0;
  double m = 0;
  std::vector<double> star_sum;  // star_sum[k] = sum_u falling(d(u), k)
  std::map<Label, std::uint64_t> label_freq;

  static CostModel er(const GraphStats& s) {
    CostModel c;
    c.mode = CostMode::ER;
    c.n = static_cast<double>(s.n);
    c.m = static_cast<double>(s.m);
    c.label_freq = s.label_frequencies;
    return c;
  }

  static CostModel degree_stats(const DataGraph& g, int max_k = 12) {
    CostModel c = er(stats(g));
    c.mode = CostMode::DegreeStats;
    c.star_sum.assign(static_cast<std::size_t>(max_k) + 1, 0.0);
    for (VertexId u = 0; u < g.num_vertices(); ++u) {
      double ff = 1.0;
      c.star_sum[0] += 1.0;
      for (int k = 1; k <= max_k; ++k) {
        double d = static_cast<double>(g.degree(u));
        if (d < k) break;
        ff *= d - (k - 1);
        c.star_sum[static_cast<std::size_t>(k)] += ff;
      }
    }
    return c;
  }

  double edge_prob() const { return n < 2 ? 0.0 : 2.0 * m / (n * n); }
};

// Expected match count of the subpattern of `q` given by (verts, edges).
// With `use_order_divisor`, estimates are divided by the pattern's
// automorphism count (symmetry breaking collapses each orbit to one match).
// Labelled vertices scale the candidate pool by their label frequency.
inline double estimate_cardinality(const QueryGraph& q, QVertexSet verts,
                                   const std::vector<std::pair<QVertex, QVertex>>& edges,
                                   const CostModel& model, bool use_order_divisor) {
  if (verts == 0) return 1.0;
  const int nv = std::popcount(verts);

  // Re-index the pattern for automorphism counting.
  std::array<int, kMaxQueryVertices> idx{};
  idx.fill(-1);
  std::vector<Label> plabels;
  int k = 0;
  for (int v = 0; v < q.num_vertices(); ++v)
    if (verts & QueryGraph::bit(static_cast<QVertex>(v))) {
      idx[static_cast<std::size_t>(v)] = k++;
      plabels.push_back(q.label(static_cast<QVertex>(v)));
    }
  std::vector<std::pair<QVertex, QVertex>> pedges;
  for (auto [a, b] : edges)
    pedges.emplace_back(static_cast<QVertex>(idx[a]), static_cast<QVertex>(idx[b]));
  const bool any_label = std::any_of(plabels.begin(), plabels.end(),
                                     [](Label l) { return l != kNoLabel; });
  QueryGraph pattern(nv, pedges, any_label ? plabels : std::vector<Label>{});

  double est = 0.0;
  bool star_refined = false;
  if (model.mode == CostMode::DegreeStats && !edges.empty()) {
    // A star: one vertex covers every edge and the edge count is nv - 1.
    for (QVertex r = 0; r < nv && !star_refined; ++r) {
      bool all = std::all_of(pedges.begin(), pedges.end(),
                             [&](auto e) { return e.first == r || e.second == r; });
      if (all && static_cast<int>(pedges.size()) == nv - 1) {
        std::size_t leaves = pedges.size();
        if (leaves < model.star_sum.size()) {
          est = model.star_sum[leaves];
          star_refined = true;
        }
      }
    }
  }
  if (!star_refined)
    est = std::pow(model.n, nv) * std::pow(model.edge_prob(), static_cast<double>(edges.size()));

  for (Label l : plabels)
    if (l != kNoLabel) {
      auto it = model.label_freq.find(l);
      double freq = it == model.label_freq.end() ? 0.0 : static_cast<double>(it->second);
      est *= model.n > 0 ? freq / model.n : 0.0;
    }
  if (use_order_divisor && !any_label) est /= static_cast<double>(automorphisms(pattern).size());
  return est;
}

// ---------------------------------------------------------------------------
// BinJoin plans

enum class UnitMode { Star, TwinTwig, CliqueAndStar };

struct BinJoinPlan {
  struct Node {
    int left = -1, right = -1;      // -1 for leaves
    JoinUnit unit;                  // valid for leaves
    QVertexSet verts = 0;
    std::vector<std::pair<QVertex, QVertex>> edges;  // subquery edges (may overlap)
    QVertexSet key = 0;             // internal: V(left) & V(right)
    double estimate = 0;
    QVertexSet compressed = 0;      // leaves: vertices kept as candidate arrays
  };
  std::vector<Node> nodes;
  int root = -1;
  double total_cost = 0;
  std::optional<QVertex> batching_vertex;
  std::vector<int> recompute_leaves;  // leaves without the batching vertex

  bool is_leaf(int i) const { return nodes[static_cast<std::size_t>(i)].left < 0; }
  std::vector<int> leaves() const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(nodes.size()); ++i)
      if (is_leaf(i)) out.push_back(i);
    return out;
  }
};

namespace detail {

struct EdgeSubset {
  QVertexSet verts = 0;
  bool connected = false;
};

inline std::vector<std::pair<QVertex, QVertex>> subset_edges(const QueryGraph& q, std::uint32_t mask) {
  std::vector<std::pair<QVertex, QVertex>> out;
  for (int e = 0; e < q.num_edges(); ++e)
    if (mask & (1u << e)) out.push_back(q.edges()[static_cast<std::size_t>(e)]);
  return out;
}

inline QVertexSet subset_verts(const QueryGraph& q, std::uint32_t mask) {
  QVertexSet vs = 0;
  for (int e = 0; e < q.num_edges(); ++e)
    if (mask & (1u << e)) {
      vs |= QueryGraph::bit(q.edges()[static_cast<std::size_t>(e)].first);
      vs |= QueryGraph::bit(q.edges()[static_cast<std::size_t>(e)].second);
    }
  return vs;
}

// Edge-subset connectivity: every edge reachable from the first through
// shared endpoints.
inline bool subset_connected(const QueryGraph& q, std::uint32_t mask) {
  if (mask == 0) return false;
  std::uint32_t seen = mask & (mask ^ (mask - 1));  // lowest edge bit
  QVertexSet verts = subset_verts(q, seen);
  for (;;) {
    std::uint32_t next = seen;
    QVertexSet nverts = verts;
    for (int e = 0; e < q.num_edges(); ++e) {
      if (!(mask & (1u << e)) || (seen & (1u << e))) continue;
      auto [a, b] = q.edges()[static_cast<std::size_t>(e)];
      if (verts & (QueryGraph::bit(a) | QueryGraph::bit(b))) {
        next |= 1u << e;
        nverts |= QueryGraph::bit(a) | QueryGraph::bit(b);
      }
    }
    if (next == seen) break;
    seen = next;
    verts = nverts;
  }
  return seen == mask;
}

// Returns the unit this edge subset forms under the mode, if any.
inline std::optional<JoinUnit> subset_as_unit(const QueryGraph& q, std::uint32_t mask, UnitMode mode) {
  auto edges = subset_edges(q, mask);
  if (edges.empty()) return std::nullopt;
  QVertexSet vs = subset_verts(q, mask);
  // Star: some vertex lies on every edge.
  for (int r = 0; r < q.num_vertices(); ++r) {
    QVertex root = static_cast<QVertex>(r);
    if (!(vs & QueryGraph::bit(root))) continue;
    bool all = std::all_of(edges.begin(), edges.end(),
                           [&](auto e) { return e.first == root || e.second == root; });
    if (all) {
      if (mode == UnitMode::TwinTwig && edges.size() > 2) continue;
      return JoinUnit{JoinUnit::Kind::Star, root, vs};
    }
  }
  if (mode == UnitMode::CliqueAndStar) {
    const int k = std::popcount(vs);
    if (k >= 3 && q.is_clique(vs) &&
        static_cast<int>(edges.size()) == k * (k - 1) / 2)
      return JoinUnit{JoinUnit::Kind::Clique, static_cast<QVertex>(std::countr_zero(vs)), vs};
  }
  return std::nullopt;
}

}  // namespace detail

// Cost-optimal bushy join plan by dynamic programming over connected edge
// subsets. A split S = Sl | Sr may overlap edges only when clique units are
// in play (overlapped decomposition). Cost of a plan is the sum of the
// estimated cardinalities of every relation it materializes.
inline BinJoinPlan optimal_binjoin_plan(const QueryGraph& q, UnitMode mode, const CostModel& model) {
  const int m = q.num_edges();
  if (m == 0 || m > 20) throw ConfigError("binjoin planning supports 1..20 query edges");
  const std::uint32_t full = (m == 32 ? ~0u : (1u << m) - 1);
  const bool use_divisor = !q.labelled();
  const bool allow_overlap = mode == UnitMode::CliqueAndStar;

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dp(full + 1, inf);
  std::vector<double> est(full + 1, 0.0);
  std::vector<std::optional<JoinUnit>> unit(full + 1);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> split(full + 1, {0, 0});
  std::vector<bool> conn(full + 1, false);

  for (std::uint32_t s = 1; s <= full; ++s) {
    conn[s] = detail::subset_connected(q, s);
    if (!conn[s]) continue;
    est[s] = estimate_cardinality(q, detail::subset_verts(q, s), detail::subset_edges(q, s),
                                  model, use_divisor);
    unit[s] = detail::subset_as_unit(q, s, mode);
    if (unit[s]) {
      dp[s] = est[s];
      continue;
    }
    // Disjoint splits: enumerate proper submasks.
    for (std::uint32_t a = (s - 1) & s; a; a = (a - 1) & s) {
      std::uint32_t b = s & ~a;
      if (a > b) continue;  // canonical
      if (dp[a] == inf || dp[b] == inf) continue;
      double c = dp[a] + dp[b] + est[s];
      if (c < dp[s]) {
        dp[s] = c;
        split[s] = {a, b};
      }
    }
    if (allow_overlap) {
      // Overlapping splits: a covers s partially, b covers the rest plus any
      // shared edges. Restrict to cases where both halves are cheaper units
      // or solved subproblems.
      for (std::uint32_t a = s; a; a = (a - 1) & s) {
        if (a == s || dp[a] == inf) continue;
        std::uint32_t rest = s & ~a;
        if (rest == 0) continue;
        // b must contain `rest`; iterate b = rest | (submask of a).
        for (std::uint32_t extra = a;; extra = (extra - 1) & a) {
          std::uint32_t b = rest | extra;
          if (extra != 0 && b != s && dp[b] != inf) {
            double c = dp[a] + dp[b] + est[s];
            if (c < dp[s]) {
              dp[s] = c;
              split[s] = {a, b};
            }
          }
          if (extra == 0) break;
        }
      }
    }
  }
  if (dp[full] == inf) throw ConfigError("no covering decomposition found");

  BinJoinPlan plan;
  plan.total_cost = dp[full];
  auto build = [&](auto&& self, std::uint32_t s) -> int {
    BinJoinPlan::Node node;
    node.verts = detail::subset_verts(q, s);
    node.edges = detail::subset_edges(q, s);
    node.estimate = est[s];
    if (unit[s]) {
      node.unit = *unit[s];
    } else {
      int l = self(self, split[s].first);
      int r = self(self, split[s].second);
      node.left = l;
      node.right = r;
      node.key = plan.nodes[static_cast<std::size_t>(l)].verts &
                 plan.nodes[static_cast<std::size_t>(r)].verts;
    }
    plan.nodes.push_back(std::move(node));
    return static_cast<int>(plan.nodes.size()) - 1;
  };
  plan.root = build(build, full);
  return plan;
}

// The join-key vertex present in the most join units; units missing it are
// flagged for per-batch recomputation. A single-unit plan batches on the
// unit's root.
inline void select_batching_vertex(BinJoinPlan& plan) {
  auto leaves = plan.leaves();
  plan.recompute_leaves.clear();
  if (leaves.size() == 1) {
    plan.batching_vertex = plan.nodes[static_cast<std::size_t>(leaves[0])].unit.root;
    return;
  }
  QVertexSet keys = 0;
  for (const auto& n : plan.nodes)
    if (n.left >= 0) keys |= n.key;
  int best = -1;
  QVertex best_v = 0;
  for (QVertex v = 0; v < kMaxQueryVertices; ++v) {
    if (!(keys & QueryGraph::bit(v))) continue;
    int cnt = 0;
    for (int l : leaves)
      if (plan.nodes[static_cast<std::size_t>(l)].verts & QueryGraph::bit(v)) cnt++;
    if (cnt > best) {
      best = cnt;
      best_v = v;
    }
  }
  if (best < 0) {
    plan.batching_vertex.reset();
    return;
  }
  plan.batching_vertex = best_v;
  for (int l : leaves)
    if (!(plan.nodes[static_cast<std::size_t>(l)].verts & QueryGraph::bit(best_v)))
      plan.recompute_leaves.push_back(l);
}

// Marks per-unit compressed vertices: a vertex is compressible iff it occurs
// in exactly one unit (then it can appear in no join key), is not a star
// root, and is not the batching vertex. Cliques compress at most one vertex.
inline void annotate_binjoin_compression(const QueryGraph&, BinJoinPlan& plan) {
  auto leaves = plan.leaves();
  std::array<int, kMaxQueryVertices> occur{};
  occur.fill(0);
  for (int l : leaves) {
    QVertexSet vs = plan.nodes[static_cast<std::size_t>(l)].verts;
    while (vs) {
      occur[static_cast<std::size_t>(std::countr_zero(vs))]++;
      vs &= vs - 1;
    }
  }
  for (int l : leaves) {
    auto& node = plan.nodes[static_cast<std::size_t>(l)];
    node.compressed = 0;
    QVertexSet candidates = 0;
    QVertexSet vs = node.verts;
    while (vs) {
      QVertex v = static_cast<QVertex>(std::countr_zero(vs));
      vs &= vs - 1;
      if (occur[v] != 1) continue;
      if (node.unit.kind == JoinUnit::Kind::Star && v == node.unit.root) continue;
      if (plan.batching_vertex && *plan.batching_vertex == v) continue;
      candidates |= QueryGraph::bit(v);
    }
    if (node.unit.kind == JoinUnit::Kind::Clique) {
      // Only one vertex of a clique may be compressed; keep the smallest.
      if (candidates) candidates = QueryGraph::bit(static_cast<QVertex>(std::countr_zero(candidates)));
    }
    node.compressed = candidates;
  }
  // Joins carry their children's candidate arrays through.
  for (auto& node : plan.nodes)
    if (node.left >= 0)
      node.compressed = plan.nodes[static_cast<std::size_t>(node.left)].compressed |
                        plan.nodes[static_cast<std::size_t>(node.right)].compressed;
}

// ---------------------------------------------------------------------------
// WOptJoin orders

struct WOptOrder {
  std::vector<QVertex> order;                       // v_1 .. v_n
  std::vector<std::vector<QVertex>> sources;        // per level: earlier neighbors
  std::vector<bool> compressed;                     // per level
  std::vector<std::vector<std::vector<QVertex>>> groups;  // per level (TrIndexing); group[0] is the root
  bool from_crystal_plan = false;

  QVertex batching_vertex() const { return order.front(); }
};

namespace detail {

inline void fill_sources(const QueryGraph& q, WOptOrder& o) {
  const int n = q.num_vertices();
  o.sources.assign(static_cast<std::size_t>(n), {});
  for (int i = 1; i < n; ++i) {
    for (int j = 0; j < i; ++j)
      if (q.has_edge(o.order[static_cast<std::size_t>(i)], o.order[static_cast<std::size_t>(j)]))
        o.sources[static_cast<std::size_t>(i)].push_back(o.order[static_cast<std::size_t>(j)]);
    if (o.sources[static_cast<std::size_t>(i)].empty())
      throw ConfigError("matching order violates prefix connectivity");
  }
}

// Greedy rule: next vertex with the most connections to the selected set,
// smaller id on ties; restricted to `allowed`.
inline void greedy_extend(const QueryGraph& q, std::vector<QVertex>& order, QVertexSet& selected,
                          QVertexSet allowed) {
  for (;;) {
    int best = -1, best_conn = -1;
    for (int v = 0; v < q.num_vertices(); ++v) {
      QVertex qv = static_cast<QVertex>(v);
      if (!(allowed & QueryGraph::bit(qv)) || (selected & QueryGraph::bit(qv))) continue;
      int conn = std::popcount(q.adj(qv) & selected);
      if (conn > best_conn) {
        best_conn = conn;
        best = v;
      }
    }
    if (best < 0) return;
    order.push_back(static_cast<QVertex>(best));
    selected |= QueryGraph::bit(static_cast<QVertex>(best));
  }
}

}  // namespace detail

// Marks levels whose vertex has no later neighbor in the order; their matches
// are kept as candidate arrays instead of being unfolded.
inline void annotate_wopt_compression(const QueryGraph& q, WOptOrder& o) {
  const int n = q.num_vertices();
  o.compressed.assign(static_cast<std::size_t>(n), false);
  for (int i = 0; i < n; ++i) {
    QVertexSet later = 0;
    for (int j = i + 1; j < n; ++j) later |= QueryGraph::bit(o.order[static_cast<std::size_t>(j)]);
    o.compressed[static_cast<std::size_t>(i)] =
        (q.adj(o.order[static_cast<std::size_t>(i)]) & later) == 0;
  }
}

// Matching order starting from the largest-degree vertex, then repeatedly the
// vertex with the most connections to the selected prefix (id breaks ties).
inline WOptOrder greedy_matching_order(const QueryGraph& q) {
  WOptOrder o;
  int start = 0;
  for (int v = 1; v < q.num_vertices(); ++v)
    if (q.degree(static_cast<QVertex>(v)) > q.degree(static_cast<QVertex>(start))) start = v;
  o.order.push_back(static_cast<QVertex>(start));
  QVertexSet selected = QueryGraph::bit(static_cast<QVertex>(start));
  detail::greedy_extend(q, o.order, selected, q.all_vertices());
  detail::fill_sources(q, o);
  annotate_wopt_compression(q, o);
  return o;
}

// Crystal-style order: the connected vertex cover first (greedy inside it),
// then the bud vertices (greedy), which are all compressible.
inline WOptOrder crystal_order(const QueryGraph& q) {
  WOptOrder o;
  o.from_crystal_plan = true;
  QVertexSet core = min_connected_vertex_cover(q);
  int start = -1;
  for (int v = 0; v < q.num_vertices(); ++v) {
    QVertex qv = static_cast<QVertex>(v);
    if (!(core & QueryGraph::bit(qv))) continue;
    if (start < 0 || q.degree(qv) > q.degree(static_cast<QVertex>(start))) start = v;
  }
  o.order.push_back(static_cast<QVertex>(start));
  QVertexSet selected = QueryGraph::bit(static_cast<QVertex>(start));
  detail::greedy_extend(q, o.order, selected, core);
  detail::greedy_extend(q, o.order, selected, q.all_vertices());
  detail::fill_sources(q, o);
  annotate_wopt_compression(q, o);
  return o;
}

// The order actually used by WOptJoin: the crystal plan is selected only when
// it compresses strictly more vertices than the greedy plan.
inline WOptOrder choose_wopt_order(const QueryGraph& q) {
  WOptOrder greedy = greedy_matching_order(q);
  WOptOrder crystal = crystal_order(q);
  auto count = [](const WOptOrder& o) {
    return std::count(o.compressed.begin(), o.compressed.end(), true);
  };
  if (count(crystal) > count(greedy)) return crystal;
  greedy.from_crystal_plan = false;
  return greedy;
}

// Greedy grouping of a level's intersection sources for TrIndexing: always
// build the largest group U(x) = {x} + {y in sources adjacent to x}, so one
// partition visit covers the whole group. Under the ordered (space-efficient)
// triangle partition, y only joins x's group when the partial order pins both
// f(x) < f(y) and f(x) < f(target); otherwise the closing edges may live in
// another partition.
inline std::vector<std::vector<QVertex>> trindexing_groups(
    const QueryGraph& q, const std::vector<QVertex>& sources, QVertex target,
    bool ordered_partition, const PartialOrder& order) {
  auto ordered_before = [&](QVertex a, QVertex b) {
    return std::find(order.begin(), order.end(), std::make_pair(a, b)) != order.end();
  };
  std::vector<QVertex> remaining = sources;
  std::vector<std::vector<QVertex>> groups;
  while (!remaining.empty()) {
    std::size_t best_i = 0;
    std::vector<QVertex> best_group;
    for (std::size_t i = 0; i < remaining.size(); ++i) {
      QVertex x = remaining[i];
      std::vector<QVertex> group{x};
      if (!ordered_partition || ordered_before(x, target)) {
        for (QVertex y : remaining) {
          if (y == x || !q.has_edge(x, y)) continue;
          if (ordered_partition && !ordered_before(x, y)) continue;
          group.push_back(y);
        }
      }
      if (group.size() > best_group.size()) {
        best_group = std::move(group);
        best_i = i;
      }
    }
    (void)best_i;
    for (QVertex v : best_group)
      remaining.erase(std::remove(remaining.begin(), remaining.end(), v), remaining.end());
    groups.push_back(std::move(best_group));
  }
  return groups;
}

inline void annotate_wopt_groups(const QueryGraph& q, WOptOrder& o, bool ordered_partition,
                                 const PartialOrder& order) {
  o.groups.assign(o.order.size(), {});
  for (std::size_t i = 1; i < o.order.size(); ++i)
    o.groups[i] = trindexing_groups(q, o.sources[i], o.order[i], ordered_partition, order);
}

// ---------------------------------------------------------------------------
// Hypercube shares

struct HypercubeShares {
  std::vector<std::uint32_t> buckets;  // b_1..b_n
  std::uint32_t used_workers() const {
    std::uint32_t p = 1;
    for (auto b : buckets) p *= b;
    return p;
  }
};

// Enumerates all bucket vectors with product <= w, keeps the maximal product,
// and among those picks the minimal estimated per-worker edge load
// (sum over query edges of the duplication factor), lexicographic on ties.
inline HypercubeShares hypercube_shares(const QueryGraph& q, std::uint32_t w, const CostModel&) {
  if (w == 0) throw ConfigError("hypercube shares need w >= 1");
  const int n = q.num_vertices();
  std::vector<std::uint32_t> current(static_cast<std::size_t>(n), 1);
  std::vector<std::uint32_t> best;
  std::uint32_t best_product = 0;
  double best_load = 0;

  auto load_of = [&](const std::vector<std::uint32_t>& b) {
    double load = 0;
    for (auto [x, y] : q.edges()) {
      double dup = 1;
      for (int i = 0; i < n; ++i)
        if (i != x && i != y) dup *= b[static_cast<std::size_t>(i)];
      load += dup;
    }
    return load;
  };

  auto consider = [&] {
    std::uint32_t p = 1;
    for (auto b : current) p *= b;
    double load = load_of(current);
    if (p > best_product || (p == best_product && load < best_load) ||
        (p == best_product && load == best_load && current < best)) {
      best_product = p;
      best_load = load;
      best = current;
    }
  };
  auto rec = [&](auto&& self, int i, std::uint32_t prod) -> void {
    if (i == n) {
      consider();
      return;
    }
    for (std::uint32_t b = 1; prod * b <= w; ++b) {
      current[static_cast<std::size_t>(i)] = b;
      self(self, i + 1, prod * b);
    }
    current[static_cast<std::size_t>(i)] = 1;
  };
  rec(rec, 0, 1);
  return HypercubeShares{best};
}

// ---------------------------------------------------------------------------
// Plan rendering + machine-readable dump/replay

inline std::string unit_to_string(const QueryGraph&, const JoinUnit& u) {
  if (u.kind == JoinUnit::Kind::Clique) return "Clique(" + vertex_set_to_string(u.vertices) + ")";
  return "Star(v" + std::to_string(u.root + 1) + "; " +
         vertex_set_to_string(u.vertices & ~QueryGraph::bit(u.root)) + ")";
}

inline void print_binjoin_plan(const QueryGraph& q, const BinJoinPlan& plan, std::ostream& os) {
  auto rec = [&](auto&& self, int node, int depth) -> void {
    const auto& nd = plan.nodes[static_cast<std::size_t>(node)];
    std::string pad(static_cast<std::size_t>(depth) * 2, ' ');
    if (nd.left < 0) {
      os << pad << unit_to_string(q, nd.unit);
      if (nd.compressed) os << " compress=" << vertex_set_to_string(nd.compressed);
      os << " est=" << nd.estimate << "\n";
    } else {
      os << pad << "Join key=" << vertex_set_to_string(nd.key) << " est=" << nd.estimate << "\n";
      self(self, nd.left, depth + 1);
      self(self, nd.right, depth + 1);
    }
  };
  rec(rec, plan.root, 0);
  if (plan.batching_vertex)
    os << "batch on v" << int(*plan.batching_vertex) + 1
       << (plan.recompute_leaves.empty() ? "" : " (some units recomputed per batch)") << "\n";
  os << "total cost=" << plan.total_cost << "\n";
}

inline void print_wopt_order(const QueryGraph&, const WOptOrder& o, std::ostream& os) {
  os << "order:";
  for (QVertex v : o.order) os << " v" << int(v) + 1;
  os << (o.from_crystal_plan ? "  (crystal plan)" : "") << "\n";
  for (std::size_t i = 1; i < o.order.size(); ++i) {
    os << "  v" << int(o.order[i]) + 1 << " <- intersect {";
    for (std::size_t j = 0; j < o.sources[i].size(); ++j)
      os << (j ? "," : "") << "v" << int(o.sources[i][j]) + 1;
    os << "}" << (o.compressed[i] ? " compressed" : "") << "\n";
  }
}

inline void dump_binjoin_plan(const BinJoinPlan& plan, std::ostream& os) {
  os << "binjoin " << plan.nodes.size() << " " << plan.root << "\n";
  for (const auto& nd : plan.nodes) {
    os << nd.left << " " << nd.right << " " << static_cast<int>(nd.unit.kind) << " "
       << int(nd.unit.root) << " " << nd.unit.vertices << " " << nd.verts << " " << nd.key << " "
       << nd.compressed << " " << nd.edges.size();
    for (auto [a, b] : nd.edges) os << " " << int(a) << " " << int(b);
    os << "\n";
  }
  os << "batch " << (plan.batching_vertex ? int(*plan.batching_vertex) : -1);
  for (int l : plan.recompute_leaves) os << " " << l;
  os << "\n";
}

inline void dump_wopt_order(const WOptOrder& o, std::ostream& os) {
  os << "wopt " << o.order.size() << " " << (o.from_crystal_plan ? 1 : 0) << "\n";
  for (std::size_t i = 0; i < o.order.size(); ++i)
    os << int(o.order[i]) << " " << (o.compressed[i] ? 1 : 0) << "\n";
}

inline WOptOrder parse_wopt_order(const QueryGraph& q, std::istream& is) {
  std::string tag;
  std::size_t n;
  int crystal;
  if (!(is >> tag >> n >> crystal) || tag != "wopt") throw ParseError("bad wopt plan dump");
  WOptOrder o;
  o.from_crystal_plan = crystal != 0;
  o.compressed.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    int v, c;
    if (!(is >> v >> c)) throw ParseError("bad wopt plan dump line");
    o.order.push_back(static_cast<QVertex>(v));
    o.compressed[i] = c != 0;
  }
  detail::fill_sources(q, o);
  return o;
}

inline BinJoinPlan parse_binjoin_plan(std::istream& is) {
  std::string tag;
  std::size_t count;
  BinJoinPlan plan;
  if (!(is >> tag >> count >> plan.root) || tag != "binjoin") throw ParseError("bad plan dump");
  plan.nodes.resize(count);
  for (auto& nd : plan.nodes) {
    int kind, root;
    std::size_t ne;
    if (!(is >> nd.left >> nd.right >> kind >> root >> nd.unit.vertices >> nd.verts >> nd.key >>
          nd.compressed >> ne))
      throw ParseError("bad plan dump node");
    nd.unit.kind = static_cast<JoinUnit::Kind>(kind);
    nd.unit.root = static_cast<QVertex>(root);
    nd.edges.resize(ne);
    for (auto& [a, b] : nd.edges) {
      int x, y;
      if (!(is >> x >> y)) throw ParseError("bad plan dump edge");
      a = static_cast<QVertex>(x);
      b = static_cast<QVertex>(y);
    }
  }
  std::string line;
  std::getline(is, line);
  std::getline(is, line);
  std::istringstream bs(line);
  int bv;
  if ((bs >> tag >> bv) && tag == "batch") {
    if (bv >= 0) plan.batching_vertex = static_cast<QVertex>(bv);
    int l;
    while (bs >> l) plan.recompute_leaves.push_back(l);
  }
  return plan;
}

}  // namespace sgm
