#include <cmath>
#include <cstring>
#include <unordered_set>

#include "doctest.h"
#include "fsg/bloom.hpp"
#include "fsg/rng.hpp"
#include "test_support.hpp"

using namespace fsg;

namespace {

std::array<std::byte, 8> key_of(std::uint64_t x) {
  std::array<std::byte, 8> k;
  std::memcpy(k.data(), &x, 8);
  return k;
}

}  // namespace

TEST_CASE("capacity formula") {
  // 9585 * ln(2)^2 / ln(100) = 999.96
  CHECK(capacity_for(9585, 0.01) == 1000);
  CHECK(capacity_for(1000, 0.01) == 104);
  for (std::uint64_t bits : {64ULL, 1000ULL, 123457ULL}) {
    for (double p : {0.1, 0.01, 0.001}) {
      const double exact = bits * std::log(2.0) * std::log(2.0) / -std::log(p);
      CHECK(std::abs(static_cast<double>(capacity_for(bits, p)) - exact) <= 0.5);
    }
  }
  CHECK_THROWS_AS(capacity_for(0, 0.01), BloomError);
  CHECK_THROWS_AS(capacity_for(10, 0.0), BloomError);
}

TEST_CASE("hash is seeded and length aware") {
  const auto a = key_of(1);
  CHECK(hash_bytes(a, 1) != hash_bytes(a, 2));
  CHECK(hash_bytes(std::span(a).first(4), 1) != hash_bytes(a, 1));
}

TEST_CASE("no false negatives while the filter grows") {
  BloomParams params;
  params.initial_capacity = 1000;
  ScalableBloomFilter f(params, 3);
  for (std::uint64_t i = 0; i < 20'000; ++i) f.insert(key_of(i * 7919));
  CHECK(f.stages().size() >= 4);
  for (std::uint64_t i = 0; i < 20'000; ++i) REQUIRE(f.maybe_contains(key_of(i * 7919)));
  CHECK(f.total_inserted() == 20'000);
}

TEST_CASE("stage budgets shrink geometrically and compound below the target") {
  BloomParams params;
  params.initial_capacity = 100;
  params.growth_factor = 2;
  params.tightening_ratio = 0.5;
  ScalableBloomFilter f(params, 1);
  for (std::uint64_t i = 0; i < 5000; ++i) f.insert(key_of(i));
  const auto& st = f.stages();
  for (std::size_t i = 1; i < st.size(); ++i) {
    CHECK(st[i].capacity == 2 * st[i - 1].capacity);
    CHECK(st[i].fp_budget == doctest::Approx(0.5 * st[i - 1].fp_budget));
  }
  CHECK(f.compound_fp_bound() <= params.fp_rate);
  for (const auto& s : st) CHECK(s.fill <= s.capacity);
}

TEST_CASE("empirical false-positive rate at the target") {
  BloomParams params;
  params.initial_capacity = 2000;
  ScalableBloomFilter f(params, 5);
  for (std::uint64_t i = 0; i < 30'000; ++i) f.insert(key_of(i));
  std::size_t fp = 0;
  const std::size_t probes = 50'000;
  for (std::uint64_t i = 0; i < probes; ++i) fp += f.maybe_contains(key_of(1'000'000 + i));
  CHECK(static_cast<double>(fp) / probes <= 0.015);
}

TEST_CASE("neighborhood filter round trip and window checks") {
  testing::TempDir dir("bloom");
  const WalkMatrix corpus = build_corpus(testing::desk_sbm(1), 2000, 16, {}, 2);
  const NeighborhoodFilter f = build_neighborhood_filter(corpus, 4, BloomParams{0.01, 0, 2, 0.5});
  CHECK(f.filter().total_inserted() == 2000 * 13);
  for (std::size_t i = 0; i < corpus.num_walks(); ++i) {
    const auto row = corpus.row(i);
    for (std::size_t t = 0; t + 4 <= 16; ++t) REQUIRE(f.maybe_contains(row.subspan(t, 4)));
  }
  f.save(dir / "f.bloom");
  CHECK(std::filesystem::file_size(dir / "f.bloom") == f.serialized_size());
  const NeighborhoodFilter back = NeighborhoodFilter::load(dir / "f.bloom");
  CHECK(back.window() == 4);
  CHECK(back.filter().stages().size() == f.filter().stages().size());
  Rng rng(1);
  for (int i = 0; i < 5000; ++i) {
    const std::array<NodeId, 4> w = {NodeId(rng.below(300)), NodeId(rng.below(300)),
                                     NodeId(rng.below(300)), NodeId(rng.below(300))};
    REQUIRE(back.maybe_contains(w) == f.maybe_contains(w));
  }
  const std::array<NodeId, 3> short_window = {1, 2, 3};
  CHECK_THROWS_AS(f.maybe_contains(short_window), BloomError);
  CHECK_THROWS_AS(build_neighborhood_filter(corpus, 17, {}), BloomError);
}

TEST_CASE("filter is much smaller than exact membership") {
  // 1M distinct 4-node windows
  BloomParams params;
  params.initial_capacity = 1'000'000;
  NeighborhoodFilter f(4, params);
  std::unordered_set<std::uint64_t> exact;
  Rng rng(8);
  std::size_t distinct = 0;
  while (distinct < 1'000'000) {
    const std::array<NodeId, 4> w = {NodeId(rng.below(3000)), NodeId(rng.below(3000)),
                                     NodeId(rng.below(3000)), NodeId(rng.below(3000))};
    std::uint64_t h = hash_bytes(std::as_bytes(std::span(w)), 0);
    if (!exact.insert(h).second) continue;
    f.insert_window(w);
    ++distinct;
  }
  const double raw_keys = 1'000'000.0 * 4 * sizeof(NodeId);
  const double ratio = raw_keys / static_cast<double>(f.serialized_size());
  MESSAGE("raw-key ratio " << ratio);
  // ~11 bits per key at a 0.5% first-stage budget: 16 bytes / 1.4 bytes
  CHECK(ratio >= 10.0);
  // An unordered_set of 16-byte keys costs at least key + node pointer +
  // bucket pointer per element.
  const double set_bytes = 1'000'000.0 * (16 + 8 + 8);
  CHECK(set_bytes / static_cast<double>(f.serialized_size()) >= 20.0);
}

TEST_CASE("parameter validation") {
  CHECK_THROWS_AS(ScalableBloomFilter(BloomParams{0.0, 10, 2, 0.5}), BloomError);
  CHECK_THROWS_AS(ScalableBloomFilter(BloomParams{0.01, 10, 1, 0.5}), BloomError);
  CHECK_THROWS_AS(ScalableBloomFilter(BloomParams{0.01, 10, 2, 1.0}), BloomError);
}
