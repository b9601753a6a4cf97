#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <sstream>

#include "sgm/graph.hpp"
#include "testutil.hpp"

using namespace sgm;

TEST_CASE("edge list loading") {
  SECTION("triangle") {
    std::istringstream is("0 1\n1 2\n2 0");
    auto lg = load_edge_list(is);
    REQUIRE(lg.graph.num_vertices() == 3);
    REQUIRE(lg.graph.num_edges() == 3);
    auto nb = lg.graph.neighbors(0);
    REQUIRE(std::vector<VertexId>(nb.begin(), nb.end()) == std::vector<VertexId>{1, 2});
  }
  SECTION("self-loop and duplicate removed") {
    std::istringstream is("0 0\n0 1\n1 0");
    auto lg = load_edge_list(is);
    REQUIRE(lg.graph.num_vertices() == 2);
    REQUIRE(lg.graph.num_edges() == 1);
  }
  SECTION("ids compacted") {
    std::istringstream is("5 7");
    auto lg = load_edge_list(is);
    REQUIRE(lg.graph.num_vertices() == 2);
    REQUIRE(lg.graph.num_edges() == 1);
    REQUIRE(lg.dense_to_original == std::vector<std::uint64_t>{5, 7});
  }
  SECTION("comments and blank lines ignored") {
    std::istringstream is("# header\n\n0 1\n  # indented comment\n1 2\n");
    auto lg = load_edge_list(is);
    REQUIRE(lg.graph.num_edges() == 2);
  }
  SECTION("malformed line names its number") {
    std::istringstream is("0 1\nbogus\n");
    try {
      load_edge_list(is);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      REQUIRE(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SECTION("label-only vertices become isolated vertices") {
    std::istringstream es("0 1");
    std::istringstream ls("0 10\n1 11\n5 12");
    auto lg = load_edge_list(es, &ls);
    REQUIRE(lg.graph.num_vertices() == 3);
    REQUIRE(lg.graph.num_edges() == 1);
    REQUIRE(lg.graph.degree(2) == 0);
    REQUIRE(lg.graph.label(2) == 12);
  }
}

TEST_CASE("apply_labels rejects out-of-range ids") {
  auto g = test::complete_graph(3);
  std::istringstream ls("0 1\n7 2\n");
  REQUIRE_THROWS_AS(apply_labels(g, ls), ParseError);
}

TEST_CASE("degree relabeling") {
  SECTION("star center gets the largest id") {
    auto g = DataGraph::from_edges(4, {{0, 1}, {0, 2}, {0, 3}});
    auto [rg, map] = relabel_by_degree(g);
    REQUIRE(map[0] == 3);
    REQUIRE(rg.degree(3) == 3);
  }
  SECTION("path endpoints get {0,1}, middle gets 2") {
    auto g = DataGraph::from_edges(3, {{0, 1}, {1, 2}});
    auto [rg, map] = relabel_by_degree(g);
    REQUIRE(map[1] == 2);
    REQUIRE(std::set<VertexId>{map[0], map[2]} == std::set<VertexId>{0, 1});
  }
  SECTION("degree-monotone, bijective, deterministic") {
    auto g = test::random_graph(60, 0.2, 11);
    auto [rg, map] = relabel_by_degree(g);
    std::vector<bool> hit(60, false);
    for (VertexId u = 0; u < 60; ++u) {
      REQUIRE(!hit[map[u]]);
      hit[map[u]] = true;
    }
    for (VertexId u = 0; u + 1 < 60; ++u) REQUIRE(rg.degree(u) <= rg.degree(u + 1));
    auto [rg2, map2] = relabel_by_degree(g);
    REQUIRE(map == map2);
    // Relabeling an already-relabeled graph is the identity.
    auto [rg3, map3] = relabel_by_degree(rg);
    for (VertexId u = 0; u < 60; ++u) REQUIRE(map3[u] == u);
    REQUIRE(rg3 == rg);
  }
  SECTION("labels follow their vertices") {
    auto g = DataGraph::from_edges(3, {{0, 1}, {1, 2}}, {7, 8, 9});
    auto [rg, map] = relabel_by_degree(g);
    for (VertexId u = 0; u < 3; ++u) REQUIRE(rg.label(map[u]) == g.label(u));
  }
}

TEST_CASE("neighbors") {
  auto tri = test::complete_graph(3);
  auto nb = tri.neighbors(0);
  REQUIRE(std::vector<VertexId>(nb.begin(), nb.end()) == std::vector<VertexId>{1, 2});
  auto path = DataGraph::from_edges(3, {{0, 1}, {1, 2}});
  auto nb1 = path.neighbors(1);
  REQUIRE(std::vector<VertexId>(nb1.begin(), nb1.end()) == std::vector<VertexId>{0, 2});
  auto iso = DataGraph::from_edges(2, {});
  REQUIRE(iso.neighbors(0).empty());
  REQUIRE_THROWS_AS(path.neighbors(9), ParseError);
}

TEST_CASE("stats") {
  auto tri = test::complete_graph(3);
  auto s = stats(tri);
  REQUIRE(s.n == 3);
  REQUIRE(s.m == 3);
  REQUIRE(s.avg_degree == 2.0);
  REQUIRE(s.max_degree == 2);

  auto star = DataGraph::from_edges(4, {{0, 1}, {0, 2}, {0, 3}});
  auto ss = stats(star);
  REQUIRE(ss.avg_degree == 1.5);
  REQUIRE(ss.max_degree == 3);

  auto empty = DataGraph::from_edges(0, {});
  auto es = stats(empty);
  REQUIRE(es.n == 0);
  REQUIRE(es.avg_degree == 0.0);
}

TEST_CASE("adjacency invariants on random graphs") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    auto g = test::random_graph(40, 0.25, seed);
    std::uint64_t degree_sum = 0;
    for (VertexId u = 0; u < g.num_vertices(); ++u) {
      auto nb = g.neighbors(u);
      for (std::size_t i = 0; i + 1 < nb.size(); ++i) REQUIRE(nb[i] < nb[i + 1]);
      for (VertexId v : nb) REQUIRE(g.has_edge(v, u));
      degree_sum += nb.size();
    }
    REQUIRE(degree_sum == 2 * g.num_edges());
  }
}

TEST_CASE("binary CSR round-trip") {
  auto g = test::random_graph(50, 0.15, 99);
  std::stringstream buf;
  save_csr(g, buf);
  auto g2 = load_csr(buf);
  REQUIRE(g2 == g);

  auto lg = DataGraph::from_edges(3, {{0, 1}, {1, 2}}, {4, 5, 6});
  std::stringstream buf2;
  save_csr(lg, buf2);
  auto lg2 = load_csr(buf2);
  REQUIRE(lg2 == lg);
  REQUIRE(lg2.has_labels());
}

TEST_CASE("CSR file sniffing") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "sgm-test-csr";
  fs::create_directories(dir);
  auto csr = (dir / "g.csr").string();
  auto txt = (dir / "g.txt").string();
  save_csr_file(test::complete_graph(4), csr);
  {
    std::ofstream os(txt);
    os << "0 1\n1 2\n";
  }
  REQUIRE(looks_like_csr_file(csr));
  REQUIRE(!looks_like_csr_file(txt));
  REQUIRE(load_csr_file(csr) == test::complete_graph(4));
  fs::remove_all(dir);
}
