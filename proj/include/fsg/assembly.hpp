#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fsg/graph.hpp"
#include "fsg/walks.hpp"

namespace fsg {

struct PairCount {
  Edge pair;  ///< canonical, u < v
  std::uint64_t count = 0;
};

/// Sparse symmetric tally of consecutive node pairs. Only the upper triangle
/// is stored; S(u,v) == S(v,u) by construction.
class CountMatrix {
 public:
  CountMatrix() = default;
  CountMatrix(NodeId num_nodes, std::vector<PairCount> pairs, std::uint64_t dropped_self_pairs);

  NodeId num_nodes() const { return n_; }
  std::uint64_t count(NodeId a, NodeId b) const;
  std::uint64_t row_sum(NodeId v) const { return row_sums_[v]; }
  /// Sorted by pair.
  const std::vector<PairCount>& pairs() const { return pairs_; }
  /// Retained consecutive pairs; equals the sum of the upper triangle.
  std::uint64_t total() const { return total_; }
  std::uint64_t dropped_self_pairs() const { return dropped_self_; }

 private:
  NodeId n_ = 0;
  std::vector<PairCount> pairs_;
  std::vector<std::uint64_t> row_sums_;
  std::uint64_t total_ = 0;
  std::uint64_t dropped_self_ = 0;
};

/// Counts each consecutive pair (a, b), a != b, once into S_ab and S_ba.
CountMatrix count_matrix(const WalkMatrix& walks, unsigned workers = 1);

struct ScoredPair {
  Edge pair;
  double forward = 0.0;   ///< p_uv = S_uv / rowsum(u)
  double backward = 0.0;  ///< p_vu = S_uv / rowsum(v)
  std::uint64_t count = 0;
  double score() const { return forward > backward ? forward : backward; }
};

/// Row-normalized edge probabilities; the symmetric ranking score of a pair is
/// max(p_uv, p_vu). Pairs never observed score 0.
class EdgeScores {
 public:
  EdgeScores() = default;
  EdgeScores(NodeId num_nodes, std::vector<ScoredPair> pairs)
      : n_(num_nodes), pairs_(std::move(pairs)) {}

  NodeId num_nodes() const { return n_; }
  const std::vector<ScoredPair>& pairs() const { return pairs_; }
  double score(NodeId a, NodeId b) const;
  /// Directed p_ab.
  double probability(NodeId from, NodeId to) const;

 private:
  const ScoredPair* find(Edge e) const;

  NodeId n_ = 0;
  std::vector<ScoredPair> pairs_;
};

EdgeScores edge_scores(const CountMatrix& counts);

enum class AssemblyMode { bernoulli, top_e };

AssemblyMode parse_assembly_mode(const std::string& name);
std::string to_string(AssemblyMode mode);

/// bernoulli: keep each observed pair independently with probability
/// max(p_uv, p_vu). top_e: keep the `target_edges` best pairs by score, then
/// raw count, then smaller pair.
Graph assemble_graph(const CountMatrix& counts, AssemblyMode mode, std::size_t target_edges,
                     std::uint64_t seed);

/// "i j count" lines.
void save_counts(const CountMatrix& counts, const std::filesystem::path& path);
/// "i j score" lines.
void save_scores(const EdgeScores& scores, const std::filesystem::path& path);

}  // namespace fsg
