#pragma once

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sgm/common.hpp"

namespace sgm {

// Undirected simple graph in compressed-sparse-row form. Immutable once built;
// all workers read it concurrently without synchronization.
class DataGraph {
 public:
  DataGraph() = default;

  // Builds from an (unsorted, possibly duplicated) undirected edge list over
  // dense ids [0, n). Self-loops and duplicate edges are dropped.
  static DataGraph from_edges(VertexId n, std::vector<std::pair<VertexId, VertexId>> edges,
                              std::vector<Label> labels = {}) {
    DataGraph g;
    g.offsets_.assign(n + 1, 0);
    std::vector<std::pair<VertexId, VertexId>> dir;
    dir.reserve(edges.size() * 2);
    for (auto [u, v] : edges) {
      if (u == v) continue;  // self-loop
      if (u >= n || v >= n) throw ParseError("edge endpoint out of range");
      dir.emplace_back(u, v);
      dir.emplace_back(v, u);
    }
    std::sort(dir.begin(), dir.end());
    dir.erase(std::unique(dir.begin(), dir.end()), dir.end());
    g.adjacency_.reserve(dir.size());
    for (auto [u, v] : dir) {
      g.offsets_[u + 1]++;
      g.adjacency_.push_back(v);
    }
    for (VertexId u = 0; u < n; ++u) g.offsets_[u + 1] += g.offsets_[u];
    g.num_edges_ = dir.size() / 2;
    if (!labels.empty()) {
      if (labels.size() != n) throw ParseError("label array size mismatch");
      g.labels_ = std::move(labels);
    }
    return g;
  }

  VertexId num_vertices() const { return static_cast<VertexId>(offsets_.empty() ? 0 : offsets_.size() - 1); }
  std::uint64_t num_edges() const { return num_edges_; }

  std::span<const VertexId> neighbors(VertexId u) const {
    if (u >= num_vertices()) throw ParseError("vertex id out of range: " + std::to_string(u));
    return {adjacency_.data() + offsets_[u], adjacency_.data() + offsets_[u + 1]};
  }

  std::uint32_t degree(VertexId u) const {
    return static_cast<std::uint32_t>(offsets_[u + 1] - offsets_[u]);
  }

  bool has_edge(VertexId u, VertexId v) const {
    if (u >= num_vertices() || v >= num_vertices()) return false;
    auto nu = neighbors(u);
    return std::binary_search(nu.begin(), nu.end(), v);
  }

  bool has_labels() const { return !labels_.empty(); }
  Label label(VertexId u) const { return labels_.empty() ? kNoLabel : labels_[u]; }

  const std::vector<std::uint64_t>& offsets() const { return offsets_; }
  const std::vector<VertexId>& adjacency() const { return adjacency_; }
  const std::vector<Label>& labels() const { return labels_; }

  bool operator==(const DataGraph& o) const {
    return offsets_ == o.offsets_ && adjacency_ == o.adjacency_ && labels_ == o.labels_;
  }

 private:
  std::vector<std::uint64_t> offsets_;  // length N+1, offsets_[N] == 2M
  std::vector<VertexId> adjacency_;     // length 2M, each list strictly increasing
  std::vector<Label> labels_;           // empty or length N
  std::uint64_t num_edges_ = 0;
};

struct GraphStats {
  VertexId n = 0;
  std::uint64_t m = 0;
  double avg_degree = 0.0;
  std::uint32_t max_degree = 0;
  std::map<Label, std::uint64_t> label_frequencies;
};

inline GraphStats stats(const DataGraph& g) {
  GraphStats s;
  s.n = g.num_vertices();
  s.m = g.num_edges();
  s.avg_degree = s.n == 0 ? 0.0 : 2.0 * static_cast<double>(s.m) / s.n;
  for (VertexId u = 0; u < s.n; ++u) {
    s.max_degree = std::max(s.max_degree, g.degree(u));
    if (g.has_labels()) s.label_frequencies[g.label(u)]++;
  }
  return s;
}

namespace detail {

inline bool parse_two_ints(std::string_view line, std::uint64_t& a, std::uint64_t& b) {
  const char* p = line.data();
  const char* end = p + line.size();
  auto skip_ws = [&] { while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p; };
  auto read = [&](std::uint64_t& out) {
    skip_ws();
    if (p >= end || *p < '0' || *p > '9') return false;
    out = 0;
    while (p < end && *p >= '0' && *p <= '9') out = out * 10 + static_cast<std::uint64_t>(*p++ - '0');
    return true;
  };
  if (!read(a) || !read(b)) return false;
  skip_ws();
  return p == end;
}

}  // namespace detail

// Result of loading raw text: the graph plus the dense-id mapping that was
// applied to the original vertex ids.
struct LoadedGraph {
  DataGraph graph;
  std::vector<std::uint64_t> dense_to_original;            // dense id -> original id
  std::unordered_map<std::uint64_t, VertexId> original_to_dense;
};

// Parses "u v" whitespace-separated pairs; '#'-prefixed lines and blank lines
// are ignored. Self-loops and duplicate edges are removed. Referenced vertex
// ids are compacted to [0, N) in increasing original-id order. An optional
// label text ("u label" per line) assigns labels; vertices that appear only
// in the label text are retained as isolated vertices.
inline LoadedGraph load_edge_list(std::istream& edges_in, std::istream* labels_in = nullptr) {
  std::vector<std::pair<std::uint64_t, std::uint64_t>> raw_edges;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> raw_labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(edges_in, line)) {
    ++lineno;
    std::string_view sv(line);
    while (!sv.empty() && (sv.front() == ' ' || sv.front() == '\t')) sv.remove_prefix(1);
    if (sv.empty() || sv.front() == '#') continue;
    std::uint64_t a, b;
    if (!detail::parse_two_ints(sv, a, b))
      throw ParseError("edge list line " + std::to_string(lineno) + ": expected two non-negative integers");
    raw_edges.emplace_back(a, b);
  }
  if (labels_in) {
    lineno = 0;
    while (std::getline(*labels_in, line)) {
      ++lineno;
      std::string_view sv(line);
      while (!sv.empty() && (sv.front() == ' ' || sv.front() == '\t')) sv.remove_prefix(1);
      if (sv.empty() || sv.front() == '#') continue;
      std::uint64_t v, l;
      if (!detail::parse_two_ints(sv, v, l))
        throw ParseError("label line " + std::to_string(lineno) + ": expected \"vertex_id label_id\"");
      raw_labels.emplace_back(v, l);
    }
  }

  std::vector<std::uint64_t> ids;
  ids.reserve(raw_edges.size() * 2 + raw_labels.size());
  for (auto [a, b] : raw_edges) { ids.push_back(a); ids.push_back(b); }
  for (auto [v, l] : raw_labels) ids.push_back(v);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

  LoadedGraph out;
  out.dense_to_original = ids;
  out.original_to_dense.reserve(ids.size());
  for (VertexId i = 0; i < ids.size(); ++i) out.original_to_dense.emplace(ids[i], i);

  std::vector<std::pair<VertexId, VertexId>> edges;
  edges.reserve(raw_edges.size());
  for (auto [a, b] : raw_edges)
    edges.emplace_back(out.original_to_dense.at(a), out.original_to_dense.at(b));

  std::vector<Label> labels;
  if (!raw_labels.empty()) {
    labels.assign(ids.size(), kNoLabel);
    for (auto [v, l] : raw_labels) labels[out.original_to_dense.at(v)] = static_cast<Label>(l);
  }
  out.graph = DataGraph::from_edges(static_cast<VertexId>(ids.size()), std::move(edges), std::move(labels));
  return out;
}

// Applies a "vertex_id label_id" label text to a graph whose id space is
// already fixed. A label for an id >= N is an error here (unlike text
// ingestion, where unseen ids become isolated vertices).
inline DataGraph apply_labels(const DataGraph& g, std::istream& labels_in) {
  std::vector<Label> labels(g.num_vertices(), kNoLabel);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(labels_in, line)) {
    ++lineno;
    std::string_view sv(line);
    while (!sv.empty() && (sv.front() == ' ' || sv.front() == '\t')) sv.remove_prefix(1);
    if (sv.empty() || sv.front() == '#') continue;
    std::uint64_t v, l;
    if (!detail::parse_two_ints(sv, v, l))
      throw ParseError("label line " + std::to_string(lineno) + ": expected \"vertex_id label_id\"");
    if (v >= g.num_vertices())
      throw ParseError("label line " + std::to_string(lineno) + ": unknown vertex " + std::to_string(v));
    labels[v] = static_cast<Label>(l);
  }
  std::vector<std::pair<VertexId, VertexId>> edges;
  for (VertexId u = 0; u < g.num_vertices(); ++u)
    for (VertexId v : g.neighbors(u))
      if (u < v) edges.emplace_back(u, v);
  return DataGraph::from_edges(g.num_vertices(), std::move(edges), std::move(labels));
}

// Relabels vertices so that degree is non-decreasing in the new id. Ties are
// broken by original id, which makes repeated relabeling the identity.
// Returns the relabeled graph and the old->new mapping.
inline std::pair<DataGraph, std::vector<VertexId>> relabel_by_degree(const DataGraph& g) {
  const VertexId n = g.num_vertices();
  std::vector<VertexId> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](VertexId a, VertexId b) {
    if (g.degree(a) != g.degree(b)) return g.degree(a) < g.degree(b);
    return a < b;
  });
  std::vector<VertexId> old_to_new(n);
  for (VertexId rank = 0; rank < n; ++rank) old_to_new[order[rank]] = rank;

  std::vector<std::pair<VertexId, VertexId>> edges;
  edges.reserve(g.num_edges());
  for (VertexId u = 0; u < n; ++u)
    for (VertexId v : g.neighbors(u))
      if (u < v) edges.emplace_back(old_to_new[u], old_to_new[v]);
  std::vector<Label> labels;
  if (g.has_labels()) {
    labels.assign(n, kNoLabel);
    for (VertexId u = 0; u < n; ++u) labels[old_to_new[u]] = g.label(u);
  }
  return {DataGraph::from_edges(n, std::move(edges), std::move(labels)), std::move(old_to_new)};
}

// ---------------------------------------------------------------------------
// Binary CSR file: little-endian u64 header (N, M, has_labels), then offsets
// as u64[N+1], adjacency as u32[2M], labels as i32[N] when has_labels.

namespace detail {

template <typename T>
void write_pod(std::ostream& os, const T* data, std::size_t count) {
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(sizeof(T) * count));
}

template <typename T>
void read_pod(std::istream& is, T* data, std::size_t count) {
  is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(sizeof(T) * count));
  if (!is) throw ParseError("binary CSR: truncated file");
}

}  // namespace detail

inline void save_csr(const DataGraph& g, std::ostream& os) {
  const std::uint64_t header[3] = {g.num_vertices(), g.num_edges(),
                                   g.has_labels() ? 1ull : 0ull};
  detail::write_pod(os, header, 3);
  detail::write_pod(os, g.offsets().data(), g.offsets().size());
  detail::write_pod(os, g.adjacency().data(), g.adjacency().size());
  if (g.has_labels()) detail::write_pod(os, g.labels().data(), g.labels().size());
  if (!os) throw ParseError("binary CSR: write failed");
}

inline DataGraph load_csr(std::istream& is) {
  std::uint64_t header[3];
  detail::read_pod(is, header, 3);
  const auto n = static_cast<VertexId>(header[0]);
  const std::uint64_t m = header[1];
  if (header[2] > 1) throw ParseError("binary CSR: bad has_labels flag");
  std::vector<std::uint64_t> offsets(n + 1);
  detail::read_pod(is, offsets.data(), offsets.size());
  if (offsets[n] != 2 * m) throw ParseError("binary CSR: offsets inconsistent with edge count");
  std::vector<VertexId> adjacency(2 * m);
  detail::read_pod(is, adjacency.data(), adjacency.size());
  std::vector<Label> labels;
  if (header[2] == 1) {
    labels.resize(n);
    detail::read_pod(is, labels.data(), labels.size());
  }
  // Rebuild through from_edges so structural invariants are revalidated.
  std::vector<std::pair<VertexId, VertexId>> edges;
  edges.reserve(m);
  for (VertexId u = 0; u < n; ++u)
    for (std::uint64_t i = offsets[u]; i < offsets[u + 1]; ++i)
      if (u < adjacency[i]) edges.emplace_back(u, adjacency[i]);
  DataGraph g = DataGraph::from_edges(n, std::move(edges), std::move(labels));
  if (g.offsets() != offsets || g.adjacency() != adjacency)
    throw ParseError("binary CSR: adjacency not in canonical form");
  return g;
}

inline void save_csr_file(const DataGraph& g, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ParseError("cannot open " + path + " for writing");
  save_csr(g, os);
}

inline DataGraph load_csr_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("cannot open " + path);
  return load_csr(is);
}

// True when the file's first bytes are consistent with the binary CSR layout
// (used by the CLI to accept either text or already-ingested input).
inline bool looks_like_csr_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return false;
  std::uint64_t header[3];
  is.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!is) return false;
  if (header[2] > 1) return false;
  is.seekg(0, std::ios::end);
  const std::uint64_t size = static_cast<std::uint64_t>(is.tellg());
  const std::uint64_t expect = 24 + 8 * (header[0] + 1) + 4 * 2 * header[1] + (header[2] ? 4 * header[0] : 0);
  return size == expect;
}

}  // namespace sgm
