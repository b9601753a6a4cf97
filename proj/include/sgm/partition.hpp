#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sgm/common.hpp"
#include "sgm/graph.hpp"

namespace sgm {

enum class PartitionMode { Hash, Triangle, TriangleOrdered };

struct PartitionConfig {
  std::uint32_t num_workers = 1;
  PartitionMode mode = PartitionMode::Hash;
  // Default placement is id mod w over degree-relabeled ids. A seed switches
  // to a mixed hash for clustered id spaces.
  std::optional<std::uint64_t> hash_seed;

  std::uint32_t owner_of(VertexId u) const {
    if (hash_seed) return static_cast<std::uint32_t>(mix64(*hash_seed ^ u) % num_workers);
    return u % num_workers;
  }
};

inline const char* partition_mode_name(PartitionMode m) {
  switch (m) {
    case PartitionMode::Hash: return "hash";
    case PartitionMode::Triangle: return "tri";
    case PartitionMode::TriangleOrdered: return "tri-ordered";
  }
  return "?";
}

// One worker's view of the data graph: the adjacency lists of its owned
// vertices, plus (in triangle modes) the edges among owned vertices'
// neighbors, merged into a single overlay adjacency so lookups see one
// virtual neighbor function.
class GraphPartition {
 public:
  std::uint32_t worker_id = 0;
  PartitionConfig config;

  // Owned vertex -> full neighbor list (views into the shared graph when
  // built in-process, or into local storage when restored from a file).
  std::vector<VertexId> owned;

  bool owns(VertexId u) const { return owned_index_.count(u) != 0; }

  std::span<const VertexId> owned_neighbors(VertexId u) const {
    auto it = owned_index_.find(u);
    if (it == owned_index_.end()) throw ExecError("vertex not owned by partition");
    return list(it->second);
  }

  // Neighbors visible through the triangle overlay for a non-owned vertex.
  std::span<const VertexId> overlay_neighbors(VertexId u) const {
    auto it = overlay_index_.find(u);
    if (it == overlay_index_.end()) return {};
    return {overlay_storage_.data() + overlay_offsets_[it->second],
            overlay_storage_.data() + overlay_offsets_[it->second + 1]};
  }

  // True when (a, b) is resolvable in this partition: via an owned endpoint
  // or via the triangle overlay.
  bool has_local_edge(VertexId a, VertexId b) const {
    if (owns(a)) {
      auto s = owned_neighbors(a);
      return std::binary_search(s.begin(), s.end(), b);
    }
    if (owns(b)) {
      auto s = owned_neighbors(b);
      return std::binary_search(s.begin(), s.end(), a);
    }
    auto s = overlay_neighbors(a);
    return std::binary_search(s.begin(), s.end(), b);
  }

  std::uint64_t owned_adjacency_entries() const { return storage_used_ ? storage_.size() : shared_entries_; }

  // Distinct extra (triangle-closing) edges stored in this partition.
  std::uint64_t extra_edge_count() const { return extra_edges_; }

  const std::vector<std::pair<VertexId, VertexId>>& extra_edges() const { return extra_pairs_; }

  // --- construction -------------------------------------------------------

  static std::vector<GraphPartition> build(const DataGraph& g, const PartitionConfig& cfg) {
    if (cfg.num_workers == 0) throw ConfigError("num_workers must be >= 1");
    std::vector<GraphPartition> parts(cfg.num_workers);
    for (std::uint32_t wid = 0; wid < cfg.num_workers; ++wid) {
      parts[wid].worker_id = wid;
      parts[wid].config = cfg;
    }
    for (VertexId u = 0; u < g.num_vertices(); ++u) {
      auto& p = parts[cfg.owner_of(u)];
      p.owned.push_back(u);
      auto nb = g.neighbors(u);
      p.owned_index_.emplace(u, p.owned_spans_.size());
      p.owned_spans_.emplace_back(nb.data(), nb.size());
      p.shared_entries_ += nb.size();
    }
    if (cfg.mode != PartitionMode::Hash) {
      const bool ordered = cfg.mode == PartitionMode::TriangleOrdered;
      for (auto& p : parts) p.collect_extra_edges(g, ordered);
    }
    for (auto& p : parts) p.finalize_overlay();
    return parts;
  }

  // --- binary dump/restore -------------------------------------------------
  // Per-worker overlay file: u64 header (worker_id, w, mode, n_owned,
  // owned_entries, n_extra), owned vertex ids, owned CSR (offsets u64 +
  // adjacency u32), extra edge pairs u32.

  void save(std::ostream& os) const {
    std::uint64_t header[6] = {worker_id, config.num_workers,
                               static_cast<std::uint64_t>(config.mode),
                               owned.size(), owned_adjacency_entries(), extra_pairs_.size()};
    detail::write_pod(os, header, 6);
    detail::write_pod(os, owned.data(), owned.size());
    std::uint64_t off = 0;
    for (std::size_t i = 0; i < owned.size(); ++i) {
      detail::write_pod(os, &off, 1);
      off += list(i).size();
    }
    detail::write_pod(os, &off, 1);
    for (std::size_t i = 0; i < owned.size(); ++i) {
      auto s = list(i);
      detail::write_pod(os, s.data(), s.size());
    }
    for (auto [a, b] : extra_pairs_) {
      detail::write_pod(os, &a, 1);
      detail::write_pod(os, &b, 1);
    }
    if (!os) throw ParseError("partition dump: write failed");
  }

  static GraphPartition load(std::istream& is) {
    std::uint64_t header[6];
    detail::read_pod(is, header, 6);
    GraphPartition p;
    p.worker_id = static_cast<std::uint32_t>(header[0]);
    p.config.num_workers = static_cast<std::uint32_t>(header[1]);
    p.config.mode = static_cast<PartitionMode>(header[2]);
    p.owned.resize(header[3]);
    detail::read_pod(is, p.owned.data(), p.owned.size());
    std::vector<std::uint64_t> offsets(header[3] + 1);
    detail::read_pod(is, offsets.data(), offsets.size());
    if (offsets.back() != header[4]) throw ParseError("partition dump: bad offsets");
    p.storage_.resize(header[4]);
    detail::read_pod(is, p.storage_.data(), p.storage_.size());
    p.storage_used_ = true;
    for (std::size_t i = 0; i < p.owned.size(); ++i) {
      p.owned_index_.emplace(p.owned[i], i);
      p.storage_offsets_.push_back(offsets[i]);
    }
    p.storage_offsets_.push_back(offsets.back());
    p.extra_pairs_.resize(header[5]);
    for (auto& [a, b] : p.extra_pairs_) {
      detail::read_pod(is, &a, 1);
      detail::read_pod(is, &b, 1);
    }
    p.extra_edges_ = p.extra_pairs_.size();
    p.finalize_overlay();
    return p;
  }

 private:
  std::span<const VertexId> list(std::size_t idx) const {
    if (storage_used_)
      return {storage_.data() + storage_offsets_[idx], storage_.data() + storage_offsets_[idx + 1]};
    return {owned_spans_[idx].first, owned_spans_[idx].second};
  }

  // Enumerates, for each owned u, neighbor pairs (a, b) that close a triangle
  // with u, by sorted intersection of N(u) and N(a). In ordered mode only
  // pairs with u < a < b are kept, so each triangle is stored exactly once
  // cluster-wide (in the owner of its smallest vertex).
  void collect_extra_edges(const DataGraph& g, bool ordered) {
    std::vector<std::pair<VertexId, VertexId>> pairs;
    for (VertexId u : owned) {
      auto nu = g.neighbors(u);
      for (VertexId a : nu) {
        if (ordered && a <= u) continue;
        auto na = g.neighbors(a);
        // b > a keeps each pair once per anchor.
        auto it = std::lower_bound(na.begin(), na.end(), a + 1);
        std::size_t i = std::upper_bound(nu.begin(), nu.end(), a) - nu.begin();
        while (it != na.end() && i < nu.size()) {
          if (*it < nu[i]) ++it;
          else if (nu[i] < *it) ++i;
          else {
            pairs.emplace_back(a, *it);
            ++it;
            ++i;
          }
        }
      }
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    extra_pairs_ = std::move(pairs);
    extra_edges_ = extra_pairs_.size();
  }

  void finalize_overlay() {
    // Overlay adjacency merges both directions of the extra pairs.
    std::vector<std::pair<VertexId, VertexId>> dir;
    dir.reserve(extra_pairs_.size() * 2);
    for (auto [a, b] : extra_pairs_) {
      dir.emplace_back(a, b);
      dir.emplace_back(b, a);
    }
    std::sort(dir.begin(), dir.end());
    dir.erase(std::unique(dir.begin(), dir.end()), dir.end());
    overlay_offsets_.clear();
    overlay_storage_.clear();
    overlay_index_.clear();
    VertexId cur = kInvalidVertex;
    for (auto [a, b] : dir) {
      if (a != cur) {
        overlay_index_.emplace(a, overlay_offsets_.size());
        overlay_offsets_.push_back(overlay_storage_.size());
        cur = a;
      }
      overlay_storage_.push_back(b);
    }
    overlay_offsets_.push_back(overlay_storage_.size());
  }

  std::unordered_map<VertexId, std::size_t> owned_index_;
  std::vector<std::pair<const VertexId*, std::size_t>> owned_spans_;  // shared-graph views
  std::uint64_t shared_entries_ = 0;

  bool storage_used_ = false;  // file-restored partitions own their adjacency
  std::vector<VertexId> storage_;
  std::vector<std::uint64_t> storage_offsets_;

  std::vector<std::pair<VertexId, VertexId>> extra_pairs_;  // canonical a < b
  std::uint64_t extra_edges_ = 0;

  std::unordered_map<VertexId, std::size_t> overlay_index_;
  std::vector<std::size_t> overlay_offsets_;
  std::vector<VertexId> overlay_storage_;
};

inline std::vector<GraphPartition> hash_partition(const DataGraph& g, std::uint32_t w,
                                                  std::optional<std::uint64_t> seed = {}) {
  return GraphPartition::build(g, PartitionConfig{w, PartitionMode::Hash, seed});
}

inline std::vector<GraphPartition> triangle_partition(const DataGraph& g, std::uint32_t w,
                                                      bool ordered,
                                                      std::optional<std::uint64_t> seed = {}) {
  return GraphPartition::build(
      g, PartitionConfig{w, ordered ? PartitionMode::TriangleOrdered : PartitionMode::Triangle, seed});
}

struct PartitionSize {
  std::uint64_t owned_entries = 0;
  std::uint64_t extra_edges = 0;
};

inline std::vector<PartitionSize> partition_sizes(const std::vector<GraphPartition>& parts) {
  std::vector<PartitionSize> out;
  out.reserve(parts.size());
  for (const auto& p : parts)
    out.push_back({p.owned_adjacency_entries(), p.extra_edge_count()});
  return out;
}

}  // namespace sgm
