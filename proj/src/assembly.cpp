#include "fsg/assembly.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>
#include <unordered_map>

#include "fsg/blob_file.hpp"
#include "fsg/rng.hpp"

namespace fsg {

namespace {
std::uint64_t pair_key(Edge e) { return (static_cast<std::uint64_t>(e.u) << 32) | e.v; }
}  // namespace

CountMatrix::CountMatrix(NodeId num_nodes, std::vector<PairCount> pairs,
                         std::uint64_t dropped_self_pairs)
    : n_(num_nodes), pairs_(std::move(pairs)), row_sums_(num_nodes, 0), dropped_self_(dropped_self_pairs) {
  std::sort(pairs_.begin(), pairs_.end(),
            [](const PairCount& a, const PairCount& b) { return a.pair < b.pair; });
  for (const auto& pc : pairs_) {
    if (pc.pair.u >= pc.pair.v || pc.pair.v >= n_) throw std::invalid_argument("bad count pair");
    row_sums_[pc.pair.u] += pc.count;
    row_sums_[pc.pair.v] += pc.count;
    total_ += pc.count;
  }
}

std::uint64_t CountMatrix::count(NodeId a, NodeId b) const {
  if (a == b) return 0;
  const Edge e = Edge::canonical(a, b);
  auto it = std::lower_bound(pairs_.begin(), pairs_.end(), e,
                             [](const PairCount& pc, const Edge& key) { return pc.pair < key; });
  return it != pairs_.end() && it->pair == e ? it->count : 0;
}

CountMatrix count_matrix(const WalkMatrix& walks, unsigned workers) {
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(1, walks.num_walks()))));
  std::vector<std::unordered_map<std::uint64_t, std::uint64_t>> partial(workers);
  std::vector<std::uint64_t> dropped(workers, 0);
  const std::size_t block = (walks.num_walks() + workers - 1) / workers;
  parallel_for(workers, workers, [&](std::size_t w) {
    const std::size_t end = std::min(walks.num_walks(), (w + 1) * block);
    for (std::size_t i = w * block; i < end; ++i) {
      const auto row = walks.row(i);
      for (std::size_t j = 0; j + 1 < row.size(); ++j) {
        if (row[j] == row[j + 1]) {
          ++dropped[w];
          continue;
        }
        ++partial[w][pair_key(Edge::canonical(row[j], row[j + 1]))];
      }
    }
  });
  std::unordered_map<std::uint64_t, std::uint64_t> merged = std::move(partial[0]);
  for (std::size_t w = 1; w < workers; ++w) {
    for (const auto& [key, c] : partial[w]) merged[key] += c;
  }
  std::vector<PairCount> pairs;
  pairs.reserve(merged.size());
  for (const auto& [key, c] : merged) {
    pairs.push_back({Edge{static_cast<NodeId>(key >> 32), static_cast<NodeId>(key & 0xffffffffu)}, c});
  }
  std::uint64_t dropped_total = 0;
  for (auto d : dropped) dropped_total += d;
  return CountMatrix(walks.num_nodes(), std::move(pairs), dropped_total);
}

const ScoredPair* EdgeScores::find(Edge e) const {
  auto it = std::lower_bound(pairs_.begin(), pairs_.end(), e,
                             [](const ScoredPair& sp, const Edge& key) { return sp.pair < key; });
  return it != pairs_.end() && it->pair == e ? &*it : nullptr;
}

double EdgeScores::score(NodeId a, NodeId b) const {
  if (a == b) return 0.0;
  const auto* sp = find(Edge::canonical(a, b));
  return sp ? sp->score() : 0.0;
}

double EdgeScores::probability(NodeId from, NodeId to) const {
  if (from == to) return 0.0;
  const auto* sp = find(Edge::canonical(from, to));
  if (!sp) return 0.0;
  return from < to ? sp->forward : sp->backward;
}

EdgeScores edge_scores(const CountMatrix& counts) {
  std::vector<ScoredPair> scored;
  scored.reserve(counts.pairs().size());
  for (const auto& pc : counts.pairs()) {
    ScoredPair sp;
    sp.pair = pc.pair;
    sp.count = pc.count;
    const auto ru = counts.row_sum(pc.pair.u);
    const auto rv = counts.row_sum(pc.pair.v);
    sp.forward = ru ? static_cast<double>(pc.count) / static_cast<double>(ru) : 0.0;
    sp.backward = rv ? static_cast<double>(pc.count) / static_cast<double>(rv) : 0.0;
    scored.push_back(sp);
  }
  return EdgeScores(counts.num_nodes(), std::move(scored));
}

AssemblyMode parse_assembly_mode(const std::string& name) {
  if (name == "bernoulli") return AssemblyMode::bernoulli;
  if (name == "top_e") return AssemblyMode::top_e;
  throw std::invalid_argument("unknown assembly mode '" + name + "' (bernoulli|top_e)");
}

std::string to_string(AssemblyMode mode) {
  return mode == AssemblyMode::bernoulli ? "bernoulli" : "top_e";
}

Graph assemble_graph(const CountMatrix& counts, AssemblyMode mode, std::size_t target_edges,
                     std::uint64_t seed) {
  const EdgeScores scores = edge_scores(counts);
  std::vector<Edge> chosen;
  if (mode == AssemblyMode::bernoulli) {
    Rng rng(tagged_seed(seed, StreamTag::assembly));
    for (const auto& sp : scores.pairs()) {
      const double u = rng.uniform();
      if (u < sp.score()) chosen.push_back(sp.pair);
    }
  } else {
    if (target_edges > scores.pairs().size()) {
      throw std::invalid_argument("top_e: requested " + std::to_string(target_edges) +
                                  " edges but only " + std::to_string(scores.pairs().size()) +
                                  " pairs were observed");
    }
    std::vector<const ScoredPair*> order;
    order.reserve(scores.pairs().size());
    for (const auto& sp : scores.pairs()) order.push_back(&sp);
    std::sort(order.begin(), order.end(), [](const ScoredPair* a, const ScoredPair* b) {
      if (a->score() != b->score()) return a->score() > b->score();
      if (a->count != b->count) return a->count > b->count;
      return a->pair < b->pair;
    });
    for (std::size_t i = 0; i < target_edges; ++i) chosen.push_back(order[i]->pair);
  }
  return Graph::from_edges(counts.num_nodes(), chosen);
}

void save_counts(const CountMatrix& counts, const std::filesystem::path& path) {
  std::string out;
  for (const auto& pc : counts.pairs()) {
    out += std::to_string(pc.pair.u) + ' ' + std::to_string(pc.pair.v) + ' ' +
           std::to_string(pc.count) + '\n';
  }
  io::write_file_atomic(path, out);
}

void save_scores(const EdgeScores& scores, const std::filesystem::path& path) {
  std::string out;
  char buf[64];
  for (const auto& sp : scores.pairs()) {
    std::snprintf(buf, sizeof buf, "%.17g", sp.score());
    out += std::to_string(sp.pair.u) + ' ' + std::to_string(sp.pair.v) + ' ' + buf + '\n';
  }
  io::write_file_atomic(path, out);
}

}  // namespace fsg
