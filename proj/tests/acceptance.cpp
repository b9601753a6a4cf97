// Acceptance suite: one line per criterion, PASS/FAIL, exit nonzero on any
// failure. Criterion 11 needs the web-Google edge list on disk and reports
// SKIP when it is absent.

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <random>
#include <sstream>

#include "sgm/oracle.hpp"
#include "sgm/strategies.hpp"
#include "testutil.hpp"

using namespace sgm;
using test::corpus;

namespace {

int failures = 0;
std::string queries_dir = "queries";
std::string data_dir = "data";

void report(int criterion, const std::string& what, bool ok, const std::string& detail = "") {
  std::cout << (ok ? "PASS" : "FAIL") << " criterion " << criterion << ": " << what;
  if (!ok && !detail.empty()) std::cout << "  [" << detail << "]";
  std::cout << std::endl;
  if (!ok) failures++;
}

struct FlagCombo {
  bool b, t, c;
};

std::vector<FlagCombo> all_combos() {
  std::vector<FlagCombo> out;
  for (int b = 0; b <= 1; ++b)
    for (int t = 0; t <= 1; ++t)
      for (int c = 0; c <= 1; ++c) out.push_back({b == 1, t == 1, c == 1});
  return out;
}

RunResult run_one(Strategy s, const QueryGraph& q, const DataGraph& g, std::uint32_t w,
                  FlagCombo f, std::uint64_t batch_size, RunHooks* hooks) {
  StrategyConfig cfg;
  cfg.strategy = s;
  cfg.batching = f.b;
  cfg.trindexing = f.t;
  cfg.compression = f.c;
  cfg.batch_size = batch_size;
  ThreadComm comm(w);
  return run_query(comm, q, g, cfg, hooks);
}

// 1. Every strategy x applicable optimization combination equals brute force
//    on 50 seeded random graphs and the 9-query corpus. Also accumulates the
//    conservation check of criterion 10.
void criterion_1_and_10() {
  auto start = std::chrono::steady_clock::now();
  const auto qs = corpus();
  std::mt19937_64 seeder(20240817);
  bool ok = true, conserve_ok = true;
  std::string detail;
  std::uint64_t runs = 0;
  for (int gi = 0; gi < 50 && ok; ++gi) {
    double p = gi % 3 == 0 ? 0.1 : (gi % 3 == 1 ? 0.2 : 0.3);
    auto g = test::random_graph(30, p, seeder());
    for (auto& [name, q] : qs) {
      auto oracle = brute_force(q, g, true, false);
      for (Strategy s :
           {Strategy::BinJoin, Strategy::WOptJoin, Strategy::ShrCube, Strategy::FullRep}) {
        const bool opts = s == Strategy::BinJoin || s == Strategy::WOptJoin;
        for (auto f : opts ? all_combos() : std::vector<FlagCombo>{{false, false, false}}) {
          RunHooks hooks;
          hooks.collect_matches = true;
          auto r = run_one(s, q, g, 4, f, 16, &hooks);
          runs++;
          auto diff = compare(oracle, r.matches);
          if (!diff.equal) {
            ok = false;
            detail = std::string(name) + " " + strategy_name(s) + " b=" + std::to_string(f.b) +
                     " t=" + std::to_string(f.t) + " c=" + std::to_string(f.c) + " seed#" +
                     std::to_string(gi) + ": " + diff.to_string();
          }
          if (r.total_sent() != r.total_recv()) {
            conserve_ok = false;
          }
          if (!ok) break;
        }
        if (!ok) break;
      }
      if (!ok) break;
    }
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  bool in_time = secs < 300.0;
  report(1, "oracle equivalence, 50 seeded G(30,p) x 9 queries x strategies x opts (" +
                std::to_string(runs) + " runs, " + std::to_string(secs) + "s)",
         ok && in_time, ok ? "exceeded 5 minutes" : detail);
  report(10, "conservation: sum(recv_integers) = sum(sent integers) on every run", conserve_ok);
}

// 2. Unordered count = |Aut(Q)| x ordered count, exactly.
void criterion_2() {
  bool ok = true;
  std::string detail;
  std::vector<DataGraph> graphs;
  graphs.push_back(test::example_graph());
  std::mt19937_64 seeder(7);
  for (int i = 0; i < 5; ++i) graphs.push_back(test::random_graph(24, 0.25, seeder()));
  for (auto& g : graphs) {
    for (auto& [name, q] : corpus()) {
      const auto aut = automorphisms(q).size();
      StrategyConfig ordered, unordered;
      ordered.strategy = unordered.strategy = Strategy::FullRep;
      unordered.use_order = false;
      ThreadComm c1(3), c2(3);
      auto r_ord = run_query(c1, q, g, ordered);
      auto r_un = run_query(c2, q, g, unordered);
      if (r_un.count != aut * r_ord.count) {
        ok = false;
        detail = std::string(name) + ": unordered=" + std::to_string(r_un.count) +
                 " ordered=" + std::to_string(r_ord.count) + " |Aut|=" + std::to_string(aut);
      }
    }
    // The worked example's query specifically: factor 4.
    auto q = test::q_square_diagonal();
    StrategyConfig ordered, unordered;
    ordered.strategy = unordered.strategy = Strategy::FullRep;
    unordered.use_order = false;
    ThreadComm c1(3), c2(3);
    if (run_query(c2, q, g, unordered).count != 4 * run_query(c1, q, g, ordered).count) {
      ok = false;
      detail = "square_diagonal factor != 4";
    }
  }
  report(2, "symmetry-breaking factor = |Aut(Q)| on all corpus queries", ok, detail);
}

// 3. WOptJoin per-level tuple counts equal oracle prefix-subquery counts.
void criterion_3() {
  auto g = test::random_graph(25, 0.2, 99);
  bool ok = true;
  std::string detail;
  for (auto& [name, q] : corpus()) {
    StrategyConfig cfg;
    cfg.strategy = Strategy::WOptJoin;
    cfg.batching = false;
    ThreadComm comm(4);
    auto r = run_query(comm, q, g, cfg);
    auto order = greedy_matching_order(q);
    auto full_order = symmetry_break_order(q);
    for (int i = 0; i < q.num_vertices() && ok; ++i) {
      QVertexSet prefix = 0;
      for (int j = 0; j <= i; ++j) prefix |= QueryGraph::bit(order.order[j]);
      std::vector<int> idx(q.num_vertices(), -1);
      int k = 0;
      for (int v = 0; v < q.num_vertices(); ++v)
        if (prefix & QueryGraph::bit(v)) idx[v] = k++;
      std::vector<std::pair<QVertex, QVertex>> pe;
      for (auto [a, b] : q.induced_edges(prefix))
        pe.emplace_back(static_cast<QVertex>(idx[a]), static_cast<QVertex>(idx[b]));
      QueryGraph sub(k, pe);
      auto oracle = brute_force(sub, g, false, false);
      std::uint64_t expect = 0;
      for (auto& m : oracle.matches) {
        bool keep = true;
        for (auto [a, b] : full_order) {
          if (idx[a] < 0 || idx[b] < 0) continue;
          if (!(m[static_cast<std::size_t>(idx[a])] < m[static_cast<std::size_t>(idx[b])]))
            keep = false;
        }
        expect += keep;
      }
      if (r.level_rows[static_cast<std::size_t>(i)] != expect) {
        ok = false;
        detail = std::string(name) + " level " + std::to_string(i + 1) + ": got " +
                 std::to_string(r.level_rows[static_cast<std::size_t>(i)]) + " want " +
                 std::to_string(expect);
      }
    }
  }
  report(3, "WOptJoin prefix soundness on G(25,0.2), all corpus queries", ok, detail);
}

// 4. ShrCube dedup: the worked example exactly, and multiplicity one per
//    match cluster-wide on random graphs.
void criterion_4() {
  bool ok = true;
  std::string detail;
  {
    auto g = DataGraph::from_edges(5, {{0, 2}, {2, 4}, {0, 4}});
    StrategyConfig cfg;
    cfg.strategy = Strategy::ShrCube;
    RunHooks hooks;
    hooks.collect_matches = true;
    ThreadComm comm(8);
    auto r = run_query(comm, test::q_triangle(), g, cfg, &hooks);
    if (r.count != 1 || r.matches != std::vector<Match>{{0, 2, 4}}) {
      ok = false;
      detail = "worked example: wrong retained set";
    }
    if (ok && (r.workers[0].computed_before_dedup < 1 || r.workers[1].computed_before_dedup < 1)) {
      ok = false;
      detail = "worked example: match not computed in both (0,0,0) and (0,0,1)";
    }
  }
  std::mt19937_64 seeder(13);
  for (int i = 0; i < 5 && ok; ++i) {
    auto g = test::random_graph(24, 0.3, seeder());
    for (auto& [name, q] : corpus()) {
      if (q.num_vertices() > 5) continue;
      auto oracle = brute_force(q, g, true, false);
      RunHooks hooks;
      hooks.collect_matches = true;
      auto r = run_one(Strategy::ShrCube, q, g, 8, {false, false, false}, 1 << 20, &hooks);
      auto diff = compare(oracle, r.matches);
      if (!diff.equal) {
        ok = false;
        detail = std::string(name) + ": " + diff.to_string();
        break;
      }
    }
  }
  report(4, "ShrCube dedup: worked example exact, multiplicity 1 cluster-wide", ok, detail);
}

// 5. ShrCube replication around 3M/w^(2/3) on G(500,0.05), w=27, and the
//    planner's (3,3,3) shares.
void criterion_5() {
  auto g0 = test::random_graph(500, 0.05, 4242);
  auto [g, map] = relabel_by_degree(g0);
  auto shares = hypercube_shares(test::q_triangle(), 27, CostModel::er(stats(g)));
  bool ok = shares.buckets == std::vector<std::uint32_t>{3, 3, 3};
  std::string detail = ok ? "" : "shares != (3,3,3)";
  if (ok) {
    StrategyConfig cfg;
    cfg.strategy = Strategy::ShrCube;
    ThreadComm comm(27);
    auto r = run_query(comm, test::q_triangle(), g, cfg);
    const double expect = 3.0 * static_cast<double>(g.num_edges()) / std::pow(27.0, 2.0 / 3.0);
    for (auto& c : r.workers) {
      // One undirected edge = an orientation pair = four payload integers.
      double got = static_cast<double>(c.received_edge_ints) / 4.0;
      if (got < 0.7 * expect || got > 1.3 * expect) {
        ok = false;
        detail = "worker received " + std::to_string(got) + " vs expected " + std::to_string(expect);
      }
    }
  }
  report(5, "ShrCube replication: shares (3,3,3), per-worker edges within +-30% of 3M/w^(2/3)", ok,
         detail);
}

// 6. Hash partition balance within +-10% of 2M/w on a graph with >= 10^4 edges.
void criterion_6() {
  auto g0 = test::random_graph(250, 0.4, 1001);
  auto [g, map] = relabel_by_degree(g0);
  bool ok = g.num_edges() >= 10000;
  std::string detail = ok ? "" : "test graph too small";
  const std::uint32_t w = 30;
  auto sizes = partition_sizes(hash_partition(g, w));
  const double target = 2.0 * static_cast<double>(g.num_edges()) / w;
  for (auto& s : sizes) {
    double got = static_cast<double>(s.owned_entries);
    if (got < 0.9 * target || got > 1.1 * target) {
      ok = false;
      detail = "partition holds " + std::to_string(got) + " vs target " + std::to_string(target);
    }
  }
  report(6, "hash partition balance within +-10% of 2M/w (M >= 10^4)", ok, detail);
}

// 7. Triangle partition: every triangle through an owned vertex locally
//    resolvable; ordered variant stores each closing edge exactly once
//    cluster-wide.
void criterion_7() {
  bool ok = true;
  std::string detail;
  std::mt19937_64 seeder(31);
  for (int trial = 0; trial < 3 && ok; ++trial) {
    auto g = test::random_graph(40, 0.25, seeder());
    const std::uint32_t w = 5;
    PartitionConfig pc{w, PartitionMode::Hash, std::nullopt};
    auto un = triangle_partition(g, w, false);
    auto ord = triangle_partition(g, w, true);
    // Enumerate all triangles directly.
    std::vector<std::array<VertexId, 3>> tris;
    for (VertexId a = 0; a < g.num_vertices(); ++a)
      for (VertexId b = a + 1; b < g.num_vertices(); ++b) {
        if (!g.has_edge(a, b)) continue;
        for (VertexId c = b + 1; c < g.num_vertices(); ++c)
          if (g.has_edge(a, c) && g.has_edge(b, c)) tris.push_back({a, b, c});
      }
    for (auto& p : un)
      for (VertexId u : p.owned) {
        auto nb = p.owned_neighbors(u);
        for (std::size_t i = 0; i < nb.size() && ok; ++i)
          for (std::size_t j = i + 1; j < nb.size(); ++j)
            if (g.has_edge(nb[i], nb[j]) && !p.has_local_edge(nb[i], nb[j])) {
              ok = false;
              detail = "unordered: closing edge not resolvable";
            }
      }
    for (auto& [a, b, c] : tris) {
      const auto& pairs = ord[pc.owner_of(a)].extra_edges();
      if (!std::binary_search(pairs.begin(), pairs.end(), std::make_pair(b, c))) {
        ok = false;
        detail = "ordered: triangle's closing edge missing from the owner of its smallest vertex";
      }
    }
    for (std::uint32_t wid = 0; wid < w && ok; ++wid)
      for (auto [b, c] : ord[wid].extra_edges()) {
        bool justified = false;
        for (auto& [x, y, z] : tris)
          if (y == b && z == c && pc.owner_of(x) == wid) justified = true;
        if (!justified) {
          ok = false;
          detail = "ordered: spurious closing edge stored";
        }
      }
  }
  report(7, "triangle partition completeness; ordered variant stores each triangle once", ok,
         detail);
}

// 8. Batching equivalence for batch sizes {1, 7, 10^6} plus the join's
//    in-memory bound under a small buffer threshold.
void criterion_8() {
  auto g = test::random_graph(30, 0.25, 321);
  bool ok = true;
  std::string detail;
  for (auto& [name, q] : corpus()) {
    if (q.num_vertices() > 5) continue;
    for (Strategy s : {Strategy::BinJoin, Strategy::WOptJoin}) {
      RunHooks hooks;
      hooks.collect_matches = true;
      auto base = run_one(s, q, g, 3, {false, true, false}, 1, &hooks);
      for (std::uint64_t bs : {std::uint64_t{1}, std::uint64_t{7}, std::uint64_t{1'000'000}}) {
        RunHooks h2;
        h2.collect_matches = true;
        StrategyConfig cfg;
        cfg.strategy = s;
        cfg.batching = true;
        cfg.trindexing = true;
        cfg.batch_size = bs;
        ThreadComm comm(3);
        auto r = run_query(comm, q, g, cfg, &h2);
        if (r.matches != base.matches) {
          ok = false;
          detail = std::string(name) + " " + strategy_name(s) + " bs=" + std::to_string(bs);
        }
      }
    }
  }
  // Join memory bound with a tiny buffer threshold.
  {
    StrategyConfig cfg;
    cfg.strategy = Strategy::BinJoin;
    cfg.batching = false;
    cfg.join_buffer_threshold = 8;
    ThreadComm comm(3);
    auto r = run_query(comm, test::q_square_diagonal(), g, cfg);
    for (auto& c : r.workers)
      if (c.join_peak_tuples > 2 * 8 + std::max<std::uint64_t>(c.join_max_group_tuples, 1)) {
        ok = false;
        detail = "join peak " + std::to_string(c.join_peak_tuples) + " exceeds bound";
      }
  }
  report(8, "batching equivalence for batch sizes {1,7,10^6}; hash-join memory bound", ok, detail);
}

// 9. Compression round-trip identity plus the falling-factorial shrink on K8.
void criterion_9() {
  auto g = test::random_graph(26, 0.25, 555);
  bool ok = true;
  std::string detail;
  for (auto& [name, q] : corpus()) {
    for (Strategy s : {Strategy::BinJoin, Strategy::WOptJoin}) {
      RunHooks h1, h2;
      h1.collect_matches = h2.collect_matches = true;
      auto plain = run_one(s, q, g, 3, {false, true, false}, 1 << 20, &h1);
      auto comp = run_one(s, q, g, 3, {false, true, true}, 1 << 20, &h2);
      if (plain.matches != comp.matches) {
        ok = false;
        detail = std::string(name) + " " + strategy_name(s) + ": compressed run differs";
      }
    }
  }
  {
    auto k8 = test::complete_graph(8);
    StrategyConfig cfg;
    cfg.strategy = Strategy::WOptJoin;
    cfg.batching = false;
    cfg.use_order = false;
    StrategyConfig comp = cfg;
    comp.compression = true;
    ThreadComm c1(2), c2(2);
    auto plain = run_query(c1, test::q_star3(), k8, cfg);
    auto compressed = run_query(c2, test::q_star3(), k8, comp);
    const std::uint64_t ff = 7 * 6 * 5;
    if (!(plain.count == compressed.count && plain.level_rows.back() == 8 * ff &&
          compressed.level_rows.back() == 8 &&
          plain.level_rows.back() / compressed.level_rows.back() == ff)) {
      ok = false;
      detail = "K8 star: expected falling-factorial factor " + std::to_string(ff);
    }
  }
  report(9, "compression round-trip identity; K8 falling-factorial shrink", ok, detail);
}

// 10b. FullRep receives nothing during matching.
void criterion_10b() {
  auto g = test::random_graph(24, 0.3, 777);
  StrategyConfig cfg;
  cfg.strategy = Strategy::FullRep;
  ThreadComm comm(4);
  auto r = run_query(comm, test::q_square_diagonal(), g, cfg);
  bool ok = r.total_recv() == 0;
  for (auto& c : r.workers) ok = ok && c.matching_recv_integers == 0;
  report(10, "FullRep matching-phase recv_integers = 0", ok);
}

// 11. Optional: reproduce two web-Google counts from the result table.
void criterion_11() {
  namespace fs = std::filesystem;
  fs::path raw = fs::path(data_dir) / "web-Google.txt";
  if (!fs::exists(raw)) {
    std::cout << "SKIP criterion 11: optional, place the web-Google edge list at " << raw.string()
              << " to enable" << std::endl;
    return;
  }
  std::ifstream es(raw);
  auto loaded = load_edge_list(es);
  auto g = relabel_by_degree(loaded.graph).first;
  bool ok = true;
  std::string detail;
  struct Expect {
    const char* name;
    QueryGraph q;
    double millions;
  };
  std::vector<Expect> checks{{"square (q1)", test::q_square(), 539.58},
                             {"4-clique (q3)", test::q_clique4(), 39.88}};
  for (auto& [name, q, want] : checks) {
    for (Strategy s : {Strategy::BinJoin, Strategy::WOptJoin}) {
      StrategyConfig cfg;
      cfg.strategy = s;
      cfg.trindexing = true;
      cfg.compression = true;
      ThreadComm comm(std::max(2u, std::thread::hardware_concurrency()));
      auto r = run_query(comm, q, g, cfg);
      double got_m = static_cast<double>(r.count) / 1e6;
      if (std::llround(got_m * 100.0) != std::llround(want * 100.0)) {
        ok = false;
        detail = std::string(name) + " " + strategy_name(s) + ": " + std::to_string(got_m) +
                 "M vs table " + std::to_string(want) + "M";
      }
    }
  }
  report(11, "web-Google counts match the result table (optional)", ok, detail);
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::strcmp(argv[i], "--queries") == 0) queries_dir = argv[i + 1];
    if (std::strcmp(argv[i], "--data") == 0) data_dir = argv[i + 1];
  }
  criterion_1_and_10();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  criterion_9();
  criterion_10b();
  criterion_11();
  if (failures) {
    std::cout << failures << " criterion(s) failed" << std::endl;
    return 1;
  }
  std::cout << "all criteria passed" << std::endl;
  return 0;
}
