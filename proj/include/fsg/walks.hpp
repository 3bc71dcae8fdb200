#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "fsg/graph.hpp"
#include "fsg/rng.hpp"

namespace fsg {

/// m x k row-major matrix of node ids; row i is walk i.
class WalkMatrix {
 public:
  WalkMatrix() = default;
  WalkMatrix(std::size_t m, std::size_t k, NodeId num_nodes)
      : m_(m), k_(k), num_nodes_(num_nodes), data_(m * k, 0) {}

  std::size_t num_walks() const { return m_; }
  std::size_t walk_length() const { return k_; }
  /// Node count of the graph the ids refer to (every entry is below it).
  NodeId num_nodes() const { return num_nodes_; }

  std::span<NodeId> row(std::size_t i) { return {data_.data() + i * k_, k_}; }
  std::span<const NodeId> row(std::size_t i) const { return {data_.data() + i * k_, k_}; }
  NodeId at(std::size_t i, std::size_t j) const { return data_[i * k_ + j]; }

  std::span<const NodeId> data() const { return data_; }

  friend bool operator==(const WalkMatrix&, const WalkMatrix&) = default;

 private:
  std::size_t m_ = 0;
  std::size_t k_ = 0;
  NodeId num_nodes_ = 0;
  std::vector<NodeId> data_;
};

/// node2vec return (p) and in-out (q) parameters.
struct SamplerParams {
  double p = 1.0;
  double q = 1.0;

  void validate() const;
};

class WalkError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unnormalized second-order weight of moving v -> x having arrived from t:
/// 1/p when x == t, 1 when x is adjacent to t, 1/q otherwise.
double transition_weight(const Graph& g, NodeId t, NodeId x, const SamplerParams& params);

/// Draws the next node after the walk traversed (t, v).
NodeId second_order_step(const Graph& g, NodeId t, NodeId v, const SamplerParams& params,
                         Rng& rng);

/// Length-k walk from `start`; the first move is uniform over Adj(start).
std::vector<NodeId> sample_walk(const Graph& g, NodeId start, std::size_t k,
                                const SamplerParams& params, Rng& rng);

/// m walks from uniform random start nodes. Walk i depends only on (seed, i),
/// so the result is identical for every worker count.
WalkMatrix build_corpus(const Graph& g, std::size_t m, std::size_t k, const SamplerParams& params,
                        std::uint64_t seed, unsigned workers = 1);

/// Binary corpus: "WLKM" | u32 version | u64 m | u32 k | u32 n | m*k u32 ids.
void save_walks(const WalkMatrix& walks, const std::filesystem::path& path);
WalkMatrix load_walks(const std::filesystem::path& path);
/// One space-separated walk per line.
void save_walks_text(const WalkMatrix& walks, const std::filesystem::path& path);

}  // namespace fsg

#include "fsg/detail/parallel.hpp"
