#include <catch2/catch_amalgamated.hpp>

#include "sgm/oracle.hpp"
#include "testutil.hpp"

using namespace sgm;

TEST_CASE("brute force on known instances") {
  SECTION("triangle on K3 with total order: one match") {
    auto r = brute_force(test::q_triangle(), test::complete_graph(3), true, false);
    REQUIRE(r.count == 1);
    REQUIRE(r.matches[0] == Match{0, 1, 2});
  }
  SECTION("worked example: 3 ordered, 12 unordered, 2 labelled") {
    auto g = test::example_graph();
    auto gl = test::example_graph(true);
    REQUIRE(brute_force(test::q_square_diagonal(), g, true, false).count == 3);
    REQUIRE(brute_force(test::q_square_diagonal(), g, false, false).count == 12);
    auto lab = brute_force(test::q_square_diagonal(true), gl, false, true);
    REQUIRE(lab.count == 2);
    REQUIRE(lab.matches == std::vector<Match>{{0, 1, 5, 4}, {3, 2, 5, 4}});
  }
}

TEST_CASE("oracle self-consistency: unordered = |Aut| x ordered") {
  for (auto& [name, q] : test::corpus()) {
    INFO(name);
    auto g = test::random_graph(20, 0.35, 101);
    auto with = brute_force(q, g, true, false);
    auto without = brute_force(q, g, false, false);
    REQUIRE(without.count == automorphisms(q).size() * with.count);
  }
}

TEST_CASE("oracle invariant under data relabeling") {
  auto g = test::random_graph(18, 0.3, 55);
  auto [rg, map] = relabel_by_degree(g);
  for (auto& [name, q] : test::corpus()) {
    if (q.num_vertices() > 4) continue;
    INFO(name);
    // Counts without the order constraint are isomorphism-invariant; with the
    // order they may pick different representatives but equally many.
    REQUIRE(brute_force(q, g, false, false).count == brute_force(q, rg, false, false).count);
    REQUIRE(brute_force(q, g, true, false).count == brute_force(q, rg, true, false).count);
  }
}

TEST_CASE("guard refuses oversized searches") {
  auto g = test::random_graph(30, 0.3, 5);
  REQUIRE_THROWS_AS(brute_force(test::q_clique5(), g, true, false, 1000),
                    OracleGuardExceeded);
}

TEST_CASE("diff reports") {
  auto g = test::complete_graph(4);
  auto r = brute_force(test::q_triangle(), g, true, false);
  SECTION("identical sets: empty diff") {
    REQUIRE(compare(r, r.matches).equal);
  }
  SECTION("missing tuple reported") {
    auto partial = r.matches;
    partial.pop_back();
    auto d = compare(r, partial);
    REQUIRE(!d.equal);
    REQUIRE(d.missing == 1);
    REQUIRE(d.unexpected == 0);
  }
  SECTION("duplicate tuple reported as multiplicity mismatch") {
    auto dup = r.matches;
    dup.push_back(dup.front());
    auto d = compare(r, dup);
    REQUIRE(!d.equal);
    REQUIRE(d.unexpected == 1);
  }
}
