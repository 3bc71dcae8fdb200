#include <cmath>
#include <numeric>

#include "doctest.h"
#include "fsg/metrics.hpp"
#include "fsg/rng.hpp"
#include "test_support.hpp"

using namespace fsg;

namespace {

double brute_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0.0;
  for (double p : pos) {
    for (double n : neg) wins += p > n ? 1.0 : p == n ? 0.5 : 0.0;
  }
  return wins / static_cast<double>(pos.size() * neg.size());
}

// Sort descending with negatives first among ties, then average precision
// at each positive.
double brute_ap(const std::vector<double>& pos, const std::vector<double>& neg) {
  std::vector<std::pair<double, int>> all;
  for (double p : pos) all.push_back({p, 1});
  for (double n : neg) all.push_back({n, 0});
  std::sort(all.begin(), all.end(), [](auto a, auto b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  double hits = 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].second) {
      hits += 1.0;
      sum += hits / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(pos.size());
}

std::uint64_t brute_triangles(const Graph& g) {
  std::uint64_t t = 0;
  const NodeId n = g.num_nodes();
  for (NodeId a = 0; a < n; ++a) {
    for (NodeId b = a + 1; b < n; ++b) {
      for (NodeId c = b + 1; c < n; ++c) t += g.has_edge(a, b) && g.has_edge(b, c) && g.has_edge(a, c);
    }
  }
  return t;
}

Graph random_graph(NodeId n, double p, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Edge> edges;
  for (NodeId a = 0; a < n; ++a) {
    for (NodeId b = a + 1; b < n; ++b) {
      if (rng.uniform() < p) edges.push_back({a, b});
    }
  }
  return Graph::from_edges(n, edges);
}

}  // namespace

TEST_CASE("hand-enumerable AUC and AP") {
  const std::vector<double> pos = {0.8, 0.3};
  const std::vector<double> neg = {0.5, 0.1};
  // pairs: (0.8>0.5) (0.8>0.1) (0.3<0.5) (0.3>0.1) -> 3/4
  CHECK(auc(pos, neg) == doctest::Approx(0.75).epsilon(1e-12));
  // ranking 0.8+ 0.5- 0.3+ 0.1-: precision 1/1 and 2/3
  CHECK(average_precision(pos, neg) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("AUC and AP agree with brute force, ties included") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> pos(1 + rng.below(20));
    std::vector<double> neg(1 + rng.below(20));
    for (double& x : pos) x = static_cast<double>(rng.below(5)) / 4.0;
    for (double& x : neg) x = static_cast<double>(rng.below(5)) / 4.0;
    REQUIRE(auc(pos, neg) == doctest::Approx(brute_auc(pos, neg)).epsilon(1e-12));
    REQUIRE(average_precision(pos, neg) == doctest::Approx(brute_ap(pos, neg)).epsilon(1e-12));
  }
  const std::vector<double> same = {0.0, 0.0};
  CHECK(auc(same, same) == doctest::Approx(0.5));
  CHECK_THROWS_AS(auc({}, same), MetricError);
}

TEST_CASE("triangle count matches brute force") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Graph g = random_graph(static_cast<NodeId>(10 + seed * 2), 0.3, seed);
    REQUIRE(triangle_count(g) == brute_triangles(g));
    REQUIRE(triangle_count(g, 3) == brute_triangles(g));
  }
}

TEST_CASE("assortativity equals the Pearson correlation over edge ends") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Graph g = random_graph(40, 0.15, 100 + seed);
    std::vector<double> x;
    std::vector<double> y;
    for (const Edge& e : g.edges()) {
      x.push_back(static_cast<double>(g.degree(e.u)));
      y.push_back(static_cast<double>(g.degree(e.v)));
      x.push_back(static_cast<double>(g.degree(e.v)));
      y.push_back(static_cast<double>(g.degree(e.u)));
    }
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      sxy += (x[i] - mx) * (y[i] - my);
      sxx += (x[i] - mx) * (x[i] - mx);
      syy += (y[i] - my) * (y[i] - my);
    }
    const auto r = degree_assortativity(g);
    REQUIRE(r.has_value());
    CHECK(*r == doctest::Approx(sxy / std::sqrt(sxx * syy)).epsilon(1e-9));
  }
  // regular graph: no degree variance
  const std::vector<Edge> cycle = {{0, 1}, {1, 2}, {2, 3}, {0, 3}};
  CHECK_FALSE(degree_assortativity(Graph::from_edges(4, cycle)).has_value());
}

TEST_CASE("power-law exponent follows the discrete estimator") {
  // degrees 1,1,1,3 (star)
  const std::vector<Edge> star = {{0, 1}, {0, 2}, {0, 3}};
  const double expected = 1.0 + 4.0 / (3 * std::log(1.0 / 0.5) + std::log(3.0 / 0.5));
  CHECK(power_law_exponent(Graph::from_edges(4, star)) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("clustering and path length on small graphs") {
  // triangle with a pendant: 0-1-2 triangle, 2-3
  const std::vector<Edge> edges = {{0, 1}, {1, 2}, {0, 2}, {2, 3}};
  const Graph g = Graph::from_edges(4, edges);
  // local: 1, 1, 1/3, 0
  CHECK(clustering_coefficient(g) == doctest::Approx((1 + 1 + 1.0 / 3 + 0) / 4));
  // distances: 01 1, 02 1, 03 2, 12 1, 13 2, 23 1 -> 8/6
  CHECK(characteristic_path_length(g) == doctest::Approx(8.0 / 6.0));
}

TEST_CASE("path length agrees with Floyd-Warshall on the largest component") {
  const Graph g = lcc(random_graph(30, 0.1, 77));
  const NodeId n = g.num_nodes();
  const double inf = 1e18;
  std::vector<std::vector<double>> d(n, std::vector<double>(n, inf));
  for (NodeId v = 0; v < n; ++v) d[v][v] = 0;
  for (const Edge& e : g.edges()) d[e.u][e.v] = d[e.v][e.u] = 1;
  for (NodeId k = 0; k < n; ++k) {
    for (NodeId i = 0; i < n; ++i) {
      for (NodeId j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
    }
  }
  double sum = 0.0;
  for (NodeId i = 0; i < n; ++i) {
    for (NodeId j = 0; j < n; ++j) sum += i == j ? 0.0 : d[i][j];
  }
  CHECK(characteristic_path_length(g, 2) == doctest::Approx(sum / (double(n) * (n - 1))));
}

TEST_CASE("community densities") {
  const std::vector<Edge> edges = {{0, 1}, {2, 3}, {1, 2}};
  const Graph g = Graph::from_edges(4, edges);
  const std::vector<std::uint32_t> labels = {0, 0, 1, 1};
  const auto m = structural_report(g, std::span<const std::uint32_t>(labels));
  CHECK(*m.intra_community_density == doctest::Approx(1.0));
  CHECK(*m.inter_community_density == doctest::Approx(0.25));
  CHECK(m.max_degree == 2);
  CHECK(m.triangle_count == 0);
}

TEST_CASE("link prediction scores unobserved pairs as zero") {
  const std::vector<PairCount> pairs = {{{0, 1}, 4}, {{1, 2}, 2}};
  const CountMatrix counts(4, pairs, 0);
  const EdgeScores scores = edge_scores(counts);
  const std::vector<Edge> pos = {{0, 1}, {2, 3}};
  const std::vector<Edge> neg = {{1, 2}, {0, 3}};
  const auto lp = link_prediction_eval(scores, pos, neg);
  // (0,1): max(4/6, 4/4) = 1; (1,2): max(2/6, 2/2) = 1; the rest 0
  const std::vector<double> ps = {scores.score(0, 1), scores.score(2, 3)};
  const std::vector<double> ns = {scores.score(1, 2), scores.score(0, 3)};
  CHECK(lp.auc == doctest::Approx(brute_auc(ps, ns)));
  CHECK(lp.positives == 2);
}

TEST_CASE("eval report json round trip keeps undefined values") {
  EvalReport r;
  r.label = "slow";
  r.auc = 0.9;
  r.average_precision = 0.8;
  r.wall_clock_generation_seconds = 1.5;
  r.structural.max_degree = 7;
  const auto j = to_json(r);
  CHECK(j.at("structural").at("assortativity") == "undefined");
  const EvalReport back = eval_report_from_json(j);
  CHECK(back.label == "slow");
  CHECK(back.auc == 0.9);
  CHECK_FALSE(back.structural.assortativity.has_value());
  CHECK(back.structural.max_degree == 7);
  CHECK(eval_csv_row(r).find("undefined") != std::string::npos);
}
