#pragma once

#include <algorithm>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "sgm/common.hpp"
#include "sgm/graph.hpp"
#include "sgm/query.hpp"

// Independent brute-force reference. Deliberately naive: query vertices are
// matched in id order (different from any planner order) and every edge is
// re-checked by binary search. Shares nothing with the execution strategies.

namespace sgm {

using Match = std::vector<VertexId>;

struct OracleResult {
  std::vector<Match> matches;  // sorted lexicographically, duplicates kept
  std::uint64_t count = 0;
};

struct OracleGuardExceeded : std::runtime_error {
  explicit OracleGuardExceeded(const std::string& w) : std::runtime_error(w) {}
};

inline OracleResult brute_force(const QueryGraph& q, const DataGraph& g,
                                bool use_order, bool use_labels,
                                std::uint64_t node_guard = 1'000'000'000ull) {
  const int n = q.num_vertices();
  const auto order = use_order ? symmetry_break_order(q) : PartialOrder{};

  // Estimated search width: N for the first vertex and any vertex with no
  // earlier neighbor, max degree otherwise.
  {
    GraphStats s = stats(g);
    long double estimate = 1.0L;
    for (int i = 0; i < n; ++i) {
      QVertexSet earlier = (QVertexSet{1} << i) - 1;
      bool anchored = i > 0 && (q.adj(static_cast<QVertex>(i)) & earlier);
      estimate *= anchored ? std::max<std::uint32_t>(1, s.max_degree) : std::max<VertexId>(1, s.n);
      if (estimate > static_cast<long double>(node_guard))
        throw OracleGuardExceeded("brute force search estimate exceeds guard");
    }
  }

  OracleResult result;
  std::vector<VertexId> assignment(static_cast<std::size_t>(n));
  std::vector<bool> used(g.num_vertices(), false);

  auto feasible = [&](int i, VertexId u) {
    if (used[u]) return false;
    if (use_labels && q.label(static_cast<QVertex>(i)) != kNoLabel &&
        g.label(u) != q.label(static_cast<QVertex>(i)))
      return false;
    for (int j = 0; j < i; ++j) {
      if (q.has_edge(static_cast<QVertex>(i), static_cast<QVertex>(j)) &&
          !g.has_edge(u, assignment[static_cast<std::size_t>(j)]))
        return false;
    }
    if (use_order) {
      for (auto [a, b] : order) {
        if (a == i && b < i && !(u < assignment[b])) return false;
        if (b == i && a < i && !(assignment[a] < u)) return false;
      }
    }
    return true;
  };

  auto recurse = [&](auto&& self, int i) -> void {
    if (i == n) {
      result.matches.push_back(assignment);
      return;
    }
    // Narrow candidates through one matched neighbor when available.
    int anchor = -1;
    for (int j = 0; j < i; ++j)
      if (q.has_edge(static_cast<QVertex>(i), static_cast<QVertex>(j))) {
        anchor = j;
        break;
      }
    if (anchor >= 0) {
      for (VertexId u : g.neighbors(assignment[static_cast<std::size_t>(anchor)])) {
        if (!feasible(i, u)) continue;
        assignment[static_cast<std::size_t>(i)] = u;
        used[u] = true;
        self(self, i + 1);
        used[u] = false;
      }
    } else {
      for (VertexId u = 0; u < g.num_vertices(); ++u) {
        if (!feasible(i, u)) continue;
        assignment[static_cast<std::size_t>(i)] = u;
        used[u] = true;
        self(self, i + 1);
        used[u] = false;
      }
    }
  };
  if (g.num_vertices() > 0) recurse(recurse, 0);
  std::sort(result.matches.begin(), result.matches.end());
  result.count = result.matches.size();
  return result;
}

// Difference report between the oracle output and a strategy's output. Both
// inputs are treated as multisets of tuples.
struct DiffReport {
  bool equal = true;
  std::uint64_t missing = 0;    // in oracle, not in candidate
  std::uint64_t unexpected = 0; // in candidate, not in oracle
  std::vector<std::string> samples;  // first few discrepancies, rendered

  std::string to_string() const {
    if (equal) return "equal";
    std::ostringstream os;
    os << "missing=" << missing << " unexpected=" << unexpected;
    for (const auto& s : samples) os << "\n  " << s;
    return os.str();
  }
};

inline std::string render_match(const Match& m) {
  std::string s = "(";
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(m[i]);
  }
  return s + ")";
}

inline DiffReport compare(const OracleResult& oracle, std::vector<Match> candidate,
                          std::size_t max_samples = 10) {
  std::sort(candidate.begin(), candidate.end());
  DiffReport rep;
  std::size_t i = 0, j = 0;
  const auto& a = oracle.matches;
  while (i < a.size() || j < candidate.size()) {
    if (j >= candidate.size() || (i < a.size() && a[i] < candidate[j])) {
      rep.equal = false;
      rep.missing++;
      if (rep.samples.size() < max_samples) rep.samples.push_back("missing " + render_match(a[i]));
      ++i;
    } else if (i >= a.size() || candidate[j] < a[i]) {
      rep.equal = false;
      rep.unexpected++;
      if (rep.samples.size() < max_samples)
        rep.samples.push_back("unexpected " + render_match(candidate[j]));
      ++j;
    } else {
      ++i;
      ++j;
    }
  }
  return rep;
}

}  // namespace sgm
