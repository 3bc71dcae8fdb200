#include <cmath>

#include "doctest.h"
#include "fsg/blob_file.hpp"
#include "fsg/switching.hpp"
#include "fsg/transformer.hpp"
#include "test_support.hpp"

using namespace fsg;

namespace {

std::vector<double> random_curve(Rng& rng) {
  const std::size_t L = 3 + rng.below(30);
  std::vector<double> c(L);
  switch (rng.below(3)) {
    case 0:  // noise
      for (double& x : c) x = rng.uniform() * 100;
      break;
    case 1: {  // flat then rising, with noise
      const std::size_t onset = rng.below(L);
      for (std::size_t i = 0; i < L; ++i) {
        c[i] = (i < onset ? 0.0 : 5.0 * static_cast<double>(i - onset)) + rng.uniform();
      }
      break;
    }
    default:  // coarse steps, lots of ties
      for (double& x : c) x = static_cast<double>(rng.below(4));
      break;
  }
  if (*std::max_element(c.begin(), c.end()) == *std::min_element(c.begin(), c.end())) c.back() += 1;
  return c;
}

}  // namespace

TEST_CASE("knee of a flat-then-rising curve is the first rising step") {
  const std::vector<double> curve = {0, 0, 0, 0, 0, 1, 5, 12, 20, 30, 40, 50};
  const std::size_t knee = find_knee(curve);
  CHECK(knee == testing::brute_force_knee(curve, 1.0));
  // x - y peaks at index 6 (0.545 - 0.1); the rise starts right after it
  CHECK(knee == 7);
  const std::vector<double> flat = {3, 3, 3, 3};
  CHECK_THROWS_AS(find_knee(flat), KneeError);
  const std::vector<double> tiny = {0, 1};
  CHECK_THROWS_AS(find_knee(tiny), KneeError);
}

TEST_CASE("find_knee agrees with the streaming reference on random curves") {
  Rng rng(2024);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto c = random_curve(rng);
    const double s = trial % 3 == 0 ? 1.0 : rng.uniform() * 3;
    REQUIRE(find_knee(c, s) == testing::brute_force_knee(c, s));
  }
}

TEST_CASE("handover json round trip and fixed handover bounds") {
  const HandoverPoint h = fixed_handover(13, 24);
  CHECK(h.j == 13);
  CHECK(h.method == HandoverMethod::fixed);
  const HandoverPoint back = handover_from_json(to_json(h));
  CHECK(back.j == 13);
  CHECK(back.method == HandoverMethod::fixed);
  CHECK_THROWS(fixed_handover(0, 24));
  CHECK_THROWS(fixed_handover(24, 24));
}

TEST_CASE("handover point indexes the slow curve from the first full window") {
  ExplorationCurve fast;
  ExplorationCurve slow;
  fast.window = slow.window = 4;
  // positions 0..2 are undefined (0); defined part starts at index 3
  slow.ex = {0, 0, 0, 1, 1, 1, 1, 2, 10, 20, 30, 40};
  fast.ex = slow.ex;
  const std::span<const double> defined(slow.ex.data() + 3, slow.ex.size() - 3);
  const HandoverPoint h = handover_point(fast, slow);
  CHECK(h.j == find_knee(defined) + 3);
  CHECK(h.method == HandoverMethod::knee);
}

TEST_CASE("exploration curve counts unseen windows") {
  const WalkMatrix corpus = build_corpus(testing::desk_sbm(1), 3000, 16, {}, 1);
  const NeighborhoodFilter filter = build_neighborhood_filter(corpus, 4, BloomParams{0.01, 0, 2, 0.5});
  const ExplorationCurve own = exploration_of(corpus, filter);
  for (double x : own.ex) CHECK(x == 0.0);

  // a walk that never follows an edge explores from its first full window
  const Graph g = testing::desk_sbm(1);
  NodeId far = g.num_nodes() - 1;
  while (g.has_edge(0, far)) --far;
  WalkMatrix odd(1, 6, corpus.num_nodes());
  for (std::size_t t = 0; t < 6; ++t) odd.row(0)[t] = t % 2 == 0 ? 0 : far;
  const ExplorationCurve c = exploration_of(odd, filter);
  CHECK(c.ex[0] == 0.0);
  CHECK(c.ex[2] == 0.0);
  CHECK(c.ex[3] == 100.0);
  CHECK(c.ex[5] == 100.0);
}

TEST_CASE("corpus replay never explores") {
  const WalkMatrix corpus = build_corpus(testing::desk_sbm(2), 4000, 16, {}, 5);
  const NeighborhoodFilter filter = build_neighborhood_filter(corpus, 4, BloomParams{0.01, 0, 2, 0.5});
  const testing::CorpusReplayModel replay(corpus);
  const auto m = measure_curves(replay, filter, 2000, 16, 9, "replay");
  for (double x : m.exploration.ex) REQUIRE(x == 0.0);
  CHECK(m.entropy[0] > 0.0);
}

TEST_CASE("cascade prefix equals fast-only generation and slow reads it once") {
  const Graph g = testing::eight_node_graph();
  const WalkMatrix corpus = build_corpus(g, 300, 8, {}, 1);
  ModelConfig cfg;
  cfg.num_nodes = 8;
  cfg.width = 16;
  cfg.heads = 2;
  cfg.context_len = 12;
  cfg.depth = 1;
  auto fast = TransformerModel::initialize(cfg, 1);
  cfg.depth = 3;
  auto slow = TransformerModel::initialize(cfg, 2);
  const std::size_t n = 64;
  const std::size_t l = 12;
  for (std::size_t j : {1UL, 4UL, 11UL}) {
    for (unsigned workers : {1U, 3U}) {
      slow->counters().reset();
      const WalkMatrix cascade = generate_fast_slow(*fast, *slow, j, n, l, 1.0, 77, workers);
      const WalkMatrix fast_only = generate_walks(*fast, n, l, 1.0, 77, 1);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t t = 0; t < j; ++t) REQUIRE(cascade.at(i, t) == fast_only.at(i, t));
      }
      CHECK(slow->counters().prefix_passes == n);
      CHECK(slow->counters().prefix_tokens == n * (j + 1));
      CHECK(slow->counters().single_passes == n * (l - j - 1));
    }
  }
  // start-node variant keeps the given first node
  const std::vector<NodeId> starts = {3, 4};
  const WalkMatrix s = generate_fast_slow(*fast, *slow, 2, starts, 6, 1.0, 1);
  CHECK(s.at(0, 0) == 3);
  CHECK(s.at(1, 0) == 4);
  CHECK_THROWS(generate_fast_slow(*fast, *slow, 0, 4, 6, 1.0, 1));
  CHECK_THROWS(generate_fast_slow(*fast, *slow, 6, 4, 6, 1.0, 1));
}

TEST_CASE("cascade refuses models with different vocabularies") {
  ModelConfig a;
  a.num_nodes = 8;
  a.width = 16;
  a.heads = 2;
  a.context_len = 8;
  ModelConfig b = a;
  b.num_nodes = 9;
  auto fa = TransformerModel::initialize(a, 1);
  auto fb = TransformerModel::initialize(b, 1);
  CHECK_THROWS_AS(generate_fast_slow(*fa, *fb, 2, 4, 6, 1.0, 1), ModelError);
}

TEST_CASE("curves csv layout") {
  testing::TempDir dir("curves");
  CurveMeasurement a;
  a.exploration.ex = {0, 1, 2};
  a.entropy = {1, 1, 1};
  CurveMeasurement b = a;
  save_curves_csv(dir / "c.csv", a, b);
  const std::string text = io::read_file(dir / "c.csv");
  CHECK(text.rfind("step,ex_fast,ex_slow,entropy_fast,entropy_slow\n", 0) == 0);
  b.entropy.pop_back();
  CHECK_THROWS(save_curves_csv(dir / "d.csv", a, b));
}
