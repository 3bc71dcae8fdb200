#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fsg {

using NodeId = std::uint32_t;

/// Undirected edge, stored canonically with u < v.
struct Edge {
  NodeId u = 0;
  NodeId v = 0;

  static Edge canonical(NodeId a, NodeId b) { return a < b ? Edge{a, b} : Edge{b, a}; }
  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Immutable undirected simple graph over dense ids 0..n-1 with sorted
/// adjacency lists.
class Graph {
 public:
  Graph() = default;

  /// Builds a graph from edges. Self-loops, duplicates (in either
  /// orientation) and out-of-range endpoints are rejected.
  static Graph from_edges(NodeId n, std::span<const Edge> edges);

  NodeId num_nodes() const { return n_; }
  std::size_t num_edges() const { return edges_.size(); }
  bool empty() const { return n_ == 0; }

  std::span<const NodeId> neighbors(NodeId v) const {
    return {adj_.data() + offsets_[v], adj_.data() + offsets_[v + 1]};
  }
  std::size_t degree(NodeId v) const { return offsets_[v + 1] - offsets_[v]; }
  bool has_edge(NodeId a, NodeId b) const;

  /// Canonical edges, sorted.
  const std::vector<Edge>& edges() const { return edges_; }

  const std::optional<std::vector<std::uint32_t>>& community_labels() const { return labels_; }
  void set_community_labels(std::vector<std::uint32_t> labels);

  friend bool operator==(const Graph& a, const Graph& b) {
    return a.n_ == b.n_ && a.edges_ == b.edges_;
  }

 private:
  NodeId n_ = 0;
  std::vector<std::size_t> offsets_{0};
  std::vector<NodeId> adj_;
  std::vector<Edge> edges_;
  std::optional<std::vector<std::uint32_t>> labels_;
};

struct LoadedGraph {
  Graph graph;
  /// original_ids[i] is the label of dense node i in the source file.
  std::vector<std::int64_t> original_ids;
  std::size_t dropped_self_loops = 0;
  std::size_t dropped_duplicates = 0;
};

/// Reads "u v" integer pairs, one per line; '#' starts a comment line.
/// Ids are compacted to 0..n-1 in order of first appearance.
LoadedGraph load_edge_list(const std::filesystem::path& path);
LoadedGraph parse_edge_list(const std::string& text, const std::string& source_name = "<memory>");

void save_edge_list(const Graph& g, const std::filesystem::path& path);
void save_edges(std::span<const Edge> edges, const std::filesystem::path& path);
/// Reads dense-id edge pairs without compaction (split files, generated graphs).
std::vector<Edge> load_edges(const std::filesystem::path& path);

void save_id_map(std::span<const std::int64_t> original_ids, const std::filesystem::path& path);

/// Reads "node label" lines keyed by original id; nodes without a label get
/// their own singleton community.
std::vector<std::uint32_t> load_community_labels(const std::filesystem::path& path,
                                                 std::span<const std::int64_t> original_ids);

bool is_connected(const Graph& g);

/// Component id per node (ids in order of smallest member).
std::vector<std::uint32_t> connected_components(const Graph& g, std::uint32_t* count = nullptr);

struct Subgraph {
  Graph graph;
  /// kept[i] is the node of the parent graph mapped to i.
  std::vector<NodeId> kept;
};

/// Largest connected component, ids re-compacted in ascending parent order.
/// Ties go to the component holding the smallest node id.
Subgraph lcc_with_map(const Graph& g);
Graph lcc(const Graph& g);

struct EdgeSplit {
  Graph train_graph;
  std::vector<Edge> heldout_edges;
  std::vector<Edge> negative_edges;
  double fraction = 0.0;
  std::uint64_t seed = 0;
};

/// Holds out round(fraction * |E|) edges uniformly at random while keeping
/// the training graph connected; samples the same number of non-edges.
EdgeSplit split_edges(const Graph& g, double holdout_fraction, std::uint64_t seed);

/// train.edges / heldout.edges / negative.edges / split.json under `dir`.
void save_split(const EdgeSplit& split, const std::filesystem::path& dir);
EdgeSplit load_split(const std::filesystem::path& dir);

}  // namespace fsg

namespace fsg {

/// Planted-partition graph: nodes in the same block connect with p_in,
/// across blocks with p_out. Community labels are attached.
Graph stochastic_block_model(std::span<const NodeId> block_sizes, double p_in, double p_out,
                             std::uint64_t seed);

}  // namespace fsg
