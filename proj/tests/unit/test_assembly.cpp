#include <map>

#include "doctest.h"
#include "fsg/assembly.hpp"
#include "test_support.hpp"

using namespace fsg;

TEST_CASE("count matrix tallies consecutive pairs symmetrically") {
  WalkMatrix w(2, 4, 5);
  const NodeId a[] = {0, 1, 0, 1};
  const NodeId b[] = {2, 2, 3, 4};
  std::copy(std::begin(a), std::end(a), w.row(0).begin());
  std::copy(std::begin(b), std::end(b), w.row(1).begin());
  const CountMatrix c = count_matrix(w);
  CHECK(c.count(0, 1) == 3);
  CHECK(c.count(1, 0) == 3);
  CHECK(c.count(2, 3) == 1);
  CHECK(c.count(3, 4) == 1);
  CHECK(c.count(0, 4) == 0);
  CHECK(c.dropped_self_pairs() == 1);  // 2 -> 2
  CHECK(c.total() == 5);
  CHECK(c.row_sum(0) == 3);
  CHECK(c.row_sum(1) == 3);
  CHECK(c.row_sum(3) == 2);
}

TEST_CASE("count matrix matches a map oracle for any worker count") {
  const Graph g = testing::desk_sbm(3);
  const WalkMatrix w = build_corpus(g, 3000, 10, {}, 1);
  std::map<std::pair<NodeId, NodeId>, std::uint64_t> oracle;
  for (std::size_t i = 0; i < w.num_walks(); ++i) {
    for (std::size_t t = 1; t < w.walk_length(); ++t) {
      const NodeId x = w.at(i, t - 1);
      const NodeId y = w.at(i, t);
      if (x != y) ++oracle[{std::min(x, y), std::max(x, y)}];
    }
  }
  const CountMatrix one = count_matrix(w, 1);
  const CountMatrix three = count_matrix(w, 3);
  CHECK(one.pairs().size() == oracle.size());
  for (const auto& pc : one.pairs()) REQUIRE(pc.count == oracle.at({pc.pair.u, pc.pair.v}));
  CHECK(three.pairs().size() == one.pairs().size());
  for (std::size_t i = 0; i < one.pairs().size(); ++i) {
    REQUIRE(three.pairs()[i].count == one.pairs()[i].count);
  }
}

TEST_CASE("edge scores are row normalized") {
  const std::vector<PairCount> pairs = {{{0, 1}, 3}, {{0, 2}, 1}, {{1, 2}, 6}};
  const EdgeScores s = edge_scores(CountMatrix(3, pairs, 0));
  CHECK(s.probability(0, 1) == doctest::Approx(0.75));
  CHECK(s.probability(1, 0) == doctest::Approx(3.0 / 9.0));
  CHECK(s.score(0, 1) == doctest::Approx(0.75));
  CHECK(s.score(1, 0) == doctest::Approx(0.75));
  CHECK(s.score(1, 2) == doctest::Approx(6.0 / 7.0));
  // rows sum to one
  for (NodeId v = 0; v < 3; ++v) {
    double row = 0.0;
    for (NodeId u = 0; u < 3; ++u) row += u == v ? 0.0 : s.probability(v, u);
    CHECK(row == doctest::Approx(1.0));
  }
}

TEST_CASE("top_e keeps the best pairs with deterministic ties") {
  const std::vector<PairCount> pairs = {{{0, 1}, 5}, {{1, 2}, 5}, {{2, 3}, 1}, {{0, 3}, 1}};
  const CountMatrix c(4, pairs, 0);
  const Graph g = assemble_graph(c, AssemblyMode::top_e, 2, 0);
  CHECK(g.num_edges() == 2);
  // (0,1) and (1,2) score 5/6, the others 1/2
  CHECK(g.has_edge(0, 1));
  CHECK(g.has_edge(1, 2));
  CHECK(assemble_graph(c, AssemblyMode::top_e, 2, 99).edges() == g.edges());
  CHECK_THROWS(assemble_graph(c, AssemblyMode::top_e, 5, 0));
}

TEST_CASE("bernoulli keeps pairs at their score") {
  // every pair scores 1 on a path: each endpoint row has one neighbor
  const std::vector<PairCount> pairs = {{{0, 1}, 2}, {{2, 3}, 7}};
  const CountMatrix c(4, pairs, 0);
  CHECK(assemble_graph(c, AssemblyMode::bernoulli, 0, 1).num_edges() == 2);
  CHECK(parse_assembly_mode("top_e") == AssemblyMode::top_e);
  CHECK(to_string(AssemblyMode::bernoulli) == "bernoulli");
  CHECK_THROWS(parse_assembly_mode("nope"));
}
