#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sgm/common.hpp"

namespace sgm {

// Index of a query vertex (0-based).
using QVertex = std::uint8_t;
// Subset of query vertices as a bitmask; queries are capped at 16 vertices
// because the planner searches exponential-in-n spaces.
using QVertexSet = std::uint32_t;

inline constexpr int kMaxQueryVertices = 16;

// Pairs (a, b) meaning every match f must satisfy f(a) < f(b). Applied only
// in unlabelled matching.
using PartialOrder = std::vector<std::pair<QVertex, QVertex>>;

// Connected simple undirected pattern graph, optionally vertex-labelled.
class QueryGraph {
 public:
  QueryGraph() = default;

  QueryGraph(int n, std::vector<std::pair<QVertex, QVertex>> edges,
             std::vector<Label> labels = {}) {
    if (n < 1 || n > kMaxQueryVertices) throw ConfigError("query must have 1..16 vertices");
    n_ = n;
    adj_.assign(static_cast<std::size_t>(n), 0);
    for (auto [a, b] : edges) {
      if (a >= n || b >= n || a == b) throw ConfigError("bad query edge");
      if (adj_[a] & bit(b)) continue;
      adj_[a] |= bit(b);
      adj_[b] |= bit(a);
      edges_.emplace_back(std::min(a, b), std::max(a, b));
    }
    std::sort(edges_.begin(), edges_.end());
    if (!labels.empty()) {
      if (static_cast<int>(labels.size()) != n) throw ConfigError("query label array size mismatch");
      labels_ = std::move(labels);
    }
  }

  static QVertexSet bit(QVertex v) { return QVertexSet{1} << v; }

  int num_vertices() const { return n_; }
  int num_edges() const { return static_cast<int>(edges_.size()); }
  const std::vector<std::pair<QVertex, QVertex>>& edges() const { return edges_; }
  QVertexSet adj(QVertex v) const { return adj_[v]; }
  bool has_edge(QVertex a, QVertex b) const { return (adj_[a] & bit(b)) != 0; }
  int degree(QVertex v) const { return std::popcount(adj_[v]); }

  bool labelled() const { return !labels_.empty(); }
  Label label(QVertex v) const { return labels_.empty() ? kNoLabel : labels_[v]; }

  QVertexSet all_vertices() const { return (QVertexSet{1} << n_) - 1; }

  bool connected() const { return connected_within(all_vertices()); }

  // Connectivity of the induced subgraph on `vs`.
  bool connected_within(QVertexSet vs) const {
    if (vs == 0) return true;
    QVertexSet seen = QVertexSet{1} << std::countr_zero(vs);
    for (;;) {
      QVertexSet next = seen;
      for (int v = 0; v < n_; ++v)
        if (seen & bit(static_cast<QVertex>(v))) next |= adj_[v] & vs;
      if (next == seen) break;
      seen = next;
    }
    return seen == vs;
  }

  // All edges with both endpoints in `vs`.
  std::vector<std::pair<QVertex, QVertex>> induced_edges(QVertexSet vs) const {
    std::vector<std::pair<QVertex, QVertex>> out;
    for (auto [a, b] : edges_)
      if ((vs & bit(a)) && (vs & bit(b))) out.emplace_back(a, b);
    return out;
  }

  bool is_clique(QVertexSet vs) const {
    for (int a = 0; a < n_; ++a) {
      if (!(vs & bit(static_cast<QVertex>(a)))) continue;
      if ((adj_[a] & vs) != (vs & ~bit(static_cast<QVertex>(a)))) return false;
    }
    return true;
  }

 private:
  int n_ = 0;
  std::vector<QVertexSet> adj_;
  std::vector<std::pair<QVertex, QVertex>> edges_;
  std::vector<Label> labels_;
};

// Query text format: first non-comment line "n", then edge lines "i j",
// then optional label lines "l i L".
inline QueryGraph parse_query(std::istream& is) {
  std::string line;
  int n = -1;
  std::vector<std::pair<QVertex, QVertex>> edges;
  std::vector<Label> labels;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tok;
    if (!(ls >> tok) || tok[0] == '#') continue;
    if (n < 0) {
      n = std::stoi(tok);
      if (n < 1 || n > kMaxQueryVertices) throw ParseError("query line " + std::to_string(lineno) + ": bad vertex count");
      continue;
    }
    if (tok == "l") {
      long v, l;
      if (!(ls >> v >> l) || v < 0 || v >= n) throw ParseError("query line " + std::to_string(lineno) + ": bad label line");
      if (labels.empty()) labels.assign(static_cast<std::size_t>(n), kNoLabel);
      labels[static_cast<std::size_t>(v)] = static_cast<Label>(l);
      continue;
    }
    long a = std::stol(tok), b;
    if (!(ls >> b) || a < 0 || b < 0 || a >= n || b >= n)
      throw ParseError("query line " + std::to_string(lineno) + ": bad edge");
    edges.emplace_back(static_cast<QVertex>(a), static_cast<QVertex>(b));
  }
  if (n < 0) throw ParseError("query text: missing vertex count");
  return QueryGraph(n, std::move(edges), std::move(labels));
}

// Full automorphism group (label-respecting), by exhaustive backtracking.
// Each permutation maps vertex i to perm[i].
inline std::vector<std::array<QVertex, 16>> automorphisms(const QueryGraph& q) {
  const int n = q.num_vertices();
  std::vector<std::array<QVertex, 16>> out;
  std::array<QVertex, 16> perm{};
  QVertexSet used = 0;

  auto backtrack = [&](auto&& self, int i) -> void {
    if (i == n) {
      out.push_back(perm);
      return;
    }
    for (QVertex img = 0; img < n; ++img) {
      if (used & QueryGraph::bit(img)) continue;
      if (q.degree(static_cast<QVertex>(i)) != q.degree(img)) continue;
      if (q.label(static_cast<QVertex>(i)) != q.label(img)) continue;
      bool ok = true;
      for (int j = 0; j < i && ok; ++j)
        if (q.has_edge(static_cast<QVertex>(i), static_cast<QVertex>(j)) !=
            q.has_edge(img, perm[j]))
          ok = false;
      if (!ok) continue;
      perm[static_cast<std::size_t>(i)] = img;
      used |= QueryGraph::bit(img);
      self(self, i + 1);
      used &= ~QueryGraph::bit(img);
    }
  };
  backtrack(backtrack, 0);
  return out;
}

// Symmetry-breaking partial order for unlabelled matching. Construction:
// repeatedly take the orbit (under the remaining automorphism group) whose
// smallest member is minimal, constrain that member below the rest of its
// orbit, and restrict the group to its stabilizer; stop at the trivial group.
// The observable guarantee is that exactly one member of each automorphism
// orbit of every match satisfies the order.
inline PartialOrder symmetry_break_order(const QueryGraph& q) {
  PartialOrder order;
  auto group = automorphisms(q);
  const int n = q.num_vertices();
  while (group.size() > 1) {
    QVertex pivot = 0;
    QVertexSet orbit = 0;
    for (QVertex v = 0; v < n; ++v) {
      orbit = 0;
      for (const auto& perm : group) orbit |= QueryGraph::bit(perm[v]);
      if (std::popcount(orbit) > 1) {
        pivot = v;
        break;
      }
    }
    for (QVertex u = 0; u < n; ++u)
      if (u != pivot && (orbit & QueryGraph::bit(u))) order.emplace_back(pivot, u);
    std::vector<std::array<QVertex, 16>> stabilizer;
    for (const auto& perm : group)
      if (perm[pivot] == pivot) stabilizer.push_back(perm);
    group.swap(stabilizer);
  }
  return order;
}

// Minimum connected vertex cover, exhaustive over subsets in increasing size;
// lexicographically smallest vertex set among minima.
inline QVertexSet min_connected_vertex_cover(const QueryGraph& q) {
  const int n = q.num_vertices();
  if (q.num_edges() == 0) return QueryGraph::bit(0);
  std::vector<QVertexSet> candidates;
  for (QVertexSet vs = 1; vs < (QVertexSet{1} << n); ++vs) candidates.push_back(vs);
  std::sort(candidates.begin(), candidates.end(), [](QVertexSet a, QVertexSet b) {
    if (std::popcount(a) != std::popcount(b)) return std::popcount(a) < std::popcount(b);
    // Lexicographic on the sorted vertex list == numeric order of the mask
    // when sizes are equal... not exactly; compare vertex by vertex.
    QVertexSet x = a, y = b;
    while (x && y) {
      int va = std::countr_zero(x), vb = std::countr_zero(y);
      if (va != vb) return va < vb;
      x &= x - 1;
      y &= y - 1;
    }
    return false;
  });
  for (QVertexSet vs : candidates) {
    bool covers = true;
    for (auto [a, b] : q.edges())
      if (!(vs & QueryGraph::bit(a)) && !(vs & QueryGraph::bit(b))) {
        covers = false;
        break;
      }
    if (covers && q.connected_within(vs)) return vs;
  }
  throw ConfigError("no connected vertex cover (query disconnected?)");
}

// A subquery whose matches are computable inside one partition: a star under
// hash partition, a clique under triangle partition.
struct JoinUnit {
  enum class Kind { Star, Clique };
  Kind kind = Kind::Star;
  QVertex root = 0;          // star only
  QVertexSet vertices = 0;   // star: root | leaves; clique: member set

  QVertexSet leaves(const QueryGraph&) const { return vertices & ~QueryGraph::bit(root); }

  std::vector<std::pair<QVertex, QVertex>> unit_edges(const QueryGraph& q) const {
    std::vector<std::pair<QVertex, QVertex>> out;
    if (kind == Kind::Star) {
      QVertexSet ls = vertices & ~QueryGraph::bit(root);
      while (ls) {
        QVertex l = static_cast<QVertex>(std::countr_zero(ls));
        ls &= ls - 1;
        out.emplace_back(std::min(root, l), std::max(root, l));
      }
      std::sort(out.begin(), out.end());
    } else {
      out = q.induced_edges(vertices);
    }
    return out;
  }

  bool operator==(const JoinUnit& o) const {
    return kind == o.kind && root == o.root && vertices == o.vertices;
  }
  bool operator<(const JoinUnit& o) const {
    return std::tie(kind, root, vertices) < std::tie(o.kind, o.root, o.vertices);
  }
};

// All maximal stars (one per vertex with degree >= 1), plus every clique of
// size >= 3 when the triangle index is available. Smaller stars (including
// TwinTwigs) are derivable subsets and enumerated by the planner on demand.
inline std::vector<JoinUnit> enumerate_join_units(const QueryGraph& q, bool triangle_indexed) {
  std::vector<JoinUnit> units;
  const int n = q.num_vertices();
  for (QVertex v = 0; v < n; ++v) {
    if (q.degree(v) == 0) continue;
    units.push_back({JoinUnit::Kind::Star, v, QueryGraph::bit(v) | q.adj(v)});
  }
  if (triangle_indexed) {
    for (QVertexSet vs = 1; vs < (QVertexSet{1} << n); ++vs) {
      if (std::popcount(vs) < 3) continue;
      if (q.is_clique(vs)) units.push_back({JoinUnit::Kind::Clique, 0, vs});
    }
  }
  std::sort(units.begin(), units.end());
  return units;
}

// Core-crystal decomposition: the core is the induced subgraph of the minimum
// connected vertex cover; each non-core vertex becomes a bud attached to its
// neighborhood (always inside the cover), and buds with identical attachments
// merge into one crystal.
struct Crystal {
  QVertexSet clique_vertices = 0;   // V_x, subset of the core
  std::vector<QVertex> buds;        // V_y, |buds| = y
  bool clique_valid = false;        // whether Q(V_x) is in fact a clique
};

struct CoreCrystal {
  QVertexSet core = 0;  // V_Q^cc
  std::vector<Crystal> crystals;
};

inline CoreCrystal core_crystal_decompose(const QueryGraph& q) {
  CoreCrystal cc;
  cc.core = min_connected_vertex_cover(q);
  std::map<QVertexSet, Crystal> by_attachment;
  for (QVertex v = 0; v < q.num_vertices(); ++v) {
    if (cc.core & QueryGraph::bit(v)) continue;
    QVertexSet vx = q.adj(v) & cc.core;
    // Non-core vertices form an independent set, so the whole neighborhood
    // lies in the cover.
    if (vx != q.adj(v)) throw ConfigError("vertex cover misses an edge");
    auto& c = by_attachment[vx];
    c.clique_vertices = vx;
    c.buds.push_back(v);
    c.clique_valid = q.is_clique(vx);
  }
  for (auto& [vx, c] : by_attachment) cc.crystals.push_back(c);
  return cc;
}

inline std::string vertex_set_to_string(QVertexSet vs) {
  std::string s = "{";
  bool first = true;
  while (vs) {
    int v = std::countr_zero(vs);
    vs &= vs - 1;
    if (!first) s += ",";
    s += "v" + std::to_string(v + 1);
    first = false;
  }
  return s + "}";
}

}  // namespace sgm
