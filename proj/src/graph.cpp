#include "fsg/graph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "fsg/blob_file.hpp"
#include "fsg/rng.hpp"
#include "json.hpp"

namespace fsg {

namespace {

std::uint64_t edge_key(Edge e) { return (static_cast<std::uint64_t>(e.u) << 32) | e.v; }

}  // namespace

Graph Graph::from_edges(NodeId n, std::span<const Edge> edges) {
  Graph g;
  g.n_ = n;
  g.edges_.reserve(edges.size());
  for (const Edge& e : edges) {
    if (e.u == e.v) throw GraphError("self-loop on node " + std::to_string(e.u));
    if (e.u >= n || e.v >= n) {
      throw GraphError("edge (" + std::to_string(e.u) + "," + std::to_string(e.v) +
                       ") out of range for n=" + std::to_string(n));
    }
    g.edges_.push_back(Edge::canonical(e.u, e.v));
  }
  std::sort(g.edges_.begin(), g.edges_.end());
  if (auto dup = std::adjacent_find(g.edges_.begin(), g.edges_.end()); dup != g.edges_.end()) {
    throw GraphError("duplicate edge (" + std::to_string(dup->u) + "," + std::to_string(dup->v) +
                     ")");
  }

  std::vector<std::size_t> deg(n, 0);
  for (const Edge& e : g.edges_) {
    ++deg[e.u];
    ++deg[e.v];
  }
  g.offsets_.assign(static_cast<std::size_t>(n) + 1, 0);
  for (NodeId v = 0; v < n; ++v) g.offsets_[v + 1] = g.offsets_[v] + deg[v];
  g.adj_.resize(g.offsets_[n]);
  std::vector<std::size_t> fill(g.offsets_.begin(), g.offsets_.end() - 1);
  for (const Edge& e : g.edges_) {
    g.adj_[fill[e.u]++] = e.v;
    g.adj_[fill[e.v]++] = e.u;
  }
  for (NodeId v = 0; v < n; ++v) {
    std::sort(g.adj_.begin() + static_cast<std::ptrdiff_t>(g.offsets_[v]),
              g.adj_.begin() + static_cast<std::ptrdiff_t>(g.offsets_[v + 1]));
  }
  return g;
}

bool Graph::has_edge(NodeId a, NodeId b) const {
  if (a >= n_ || b >= n_) return false;
  // Search the shorter list.
  if (degree(a) > degree(b)) std::swap(a, b);
  const auto nb = neighbors(a);
  return std::binary_search(nb.begin(), nb.end(), b);
}

void Graph::set_community_labels(std::vector<std::uint32_t> labels) {
  if (labels.size() != n_) {
    throw GraphError("community labels: expected " + std::to_string(n_) + " entries, got " +
                     std::to_string(labels.size()));
  }
  labels_ = std::move(labels);
}

LoadedGraph parse_edge_list(const std::string& text, const std::string& source_name) {
  LoadedGraph out;
  std::unordered_map<std::int64_t, NodeId> ids;
  auto intern = [&](std::int64_t raw) {
    auto [it, inserted] = ids.emplace(raw, static_cast<NodeId>(out.original_ids.size()));
    if (inserted) out.original_ids.push_back(raw);
    return it->second;
  };

  std::vector<Edge> edges;
  std::unordered_set<std::uint64_t> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;

    std::int64_t vals[2];
    const char* p = line.data() + first;
    const char* end = line.data() + line.size();
    for (int i = 0; i < 2; ++i) {
      while (p < end && (*p == ' ' || *p == '\t')) ++p;
      auto [next, ec] = std::from_chars(p, end, vals[i]);
      if (ec != std::errc{}) {
        throw GraphError(source_name + ":" + std::to_string(line_no) +
                         ": expected two integer node ids, got '" + line + "'");
      }
      p = next;
    }
    while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
    if (p != end) {
      throw GraphError(source_name + ":" + std::to_string(line_no) +
                       ": trailing characters in '" + line + "'");
    }

    const NodeId a = intern(vals[0]);
    const NodeId b = intern(vals[1]);
    if (a == b) {
      ++out.dropped_self_loops;
      continue;
    }
    const Edge e = Edge::canonical(a, b);
    if (!seen.insert(edge_key(e)).second) {
      ++out.dropped_duplicates;
      continue;
    }
    edges.push_back(e);
  }
  if (out.original_ids.empty()) throw GraphError(source_name + ": no edges");
  out.graph = Graph::from_edges(static_cast<NodeId>(out.original_ids.size()), edges);
  return out;
}

LoadedGraph load_edge_list(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw GraphError("edge list not found: " + path.string());
  return parse_edge_list(io::read_file(path), path.string());
}

void save_edges(std::span<const Edge> edges, const std::filesystem::path& path) {
  std::string out;
  out.reserve(edges.size() * 12);
  for (const Edge& e : edges) {
    out += std::to_string(e.u);
    out += ' ';
    out += std::to_string(e.v);
    out += '\n';
  }
  io::write_file_atomic(path, out);
}

void save_edge_list(const Graph& g, const std::filesystem::path& path) {
  save_edges(g.edges(), path);
}

std::vector<Edge> load_edges(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw GraphError("edge file not found: " + path.string());
  const std::string text = io::read_file(path);
  std::vector<Edge> edges;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::int64_t a = -1, b = -1;
    if (!(ls >> a >> b) || a < 0 || b < 0) {
      throw GraphError(path.string() + ":" + std::to_string(line_no) + ": malformed edge");
    }
    edges.push_back(Edge::canonical(static_cast<NodeId>(a), static_cast<NodeId>(b)));
  }
  return edges;
}

void save_id_map(std::span<const std::int64_t> original_ids, const std::filesystem::path& path) {
  std::string out = "# dense_id original_id\n";
  for (std::size_t i = 0; i < original_ids.size(); ++i) {
    out += std::to_string(i) + ' ' + std::to_string(original_ids[i]) + '\n';
  }
  io::write_file_atomic(path, out);
}

std::vector<std::uint32_t> load_community_labels(const std::filesystem::path& path,
                                                 std::span<const std::int64_t> original_ids) {
  std::unordered_map<std::int64_t, std::uint32_t> by_original;
  std::istringstream in(io::read_file(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::int64_t node = 0;
    std::int64_t label = 0;
    if (!(ls >> node >> label) || label < 0) {
      throw GraphError(path.string() + ":" + std::to_string(line_no) + ": malformed label line");
    }
    by_original[node] = static_cast<std::uint32_t>(label);
  }
  std::uint32_t next_free = 0;
  for (const auto& [node, label] : by_original) next_free = std::max(next_free, label + 1);
  std::vector<std::uint32_t> labels(original_ids.size());
  for (std::size_t i = 0; i < original_ids.size(); ++i) {
    auto it = by_original.find(original_ids[i]);
    labels[i] = it != by_original.end() ? it->second : next_free++;
  }
  return labels;
}

std::vector<std::uint32_t> connected_components(const Graph& g, std::uint32_t* count) {
  constexpr auto kUnset = std::numeric_limits<std::uint32_t>::max();
  std::vector<std::uint32_t> comp(g.num_nodes(), kUnset);
  std::vector<NodeId> queue;
  std::uint32_t next = 0;
  for (NodeId s = 0; s < g.num_nodes(); ++s) {
    if (comp[s] != kUnset) continue;
    comp[s] = next;
    queue.assign(1, s);
    for (std::size_t head = 0; head < queue.size(); ++head) {
      for (NodeId w : g.neighbors(queue[head])) {
        if (comp[w] == kUnset) {
          comp[w] = next;
          queue.push_back(w);
        }
      }
    }
    ++next;
  }
  if (count) *count = next;
  return comp;
}

bool is_connected(const Graph& g) {
  std::uint32_t count = 0;
  connected_components(g, &count);
  return count <= 1;
}

Subgraph lcc_with_map(const Graph& g) {
  if (g.empty()) throw GraphError("lcc of an empty graph");
  std::uint32_t count = 0;
  const auto comp = connected_components(g, &count);
  std::vector<std::size_t> sizes(count, 0);
  for (auto c : comp) ++sizes[c];
  // Components are numbered by their smallest node, so the first maximum wins ties.
  const auto best = static_cast<std::uint32_t>(
      std::max_element(sizes.begin(), sizes.end()) - sizes.begin());

  Subgraph out;
  std::vector<NodeId> remap(g.num_nodes(), std::numeric_limits<NodeId>::max());
  for (NodeId v = 0; v < g.num_nodes(); ++v) {
    if (comp[v] == best) {
      remap[v] = static_cast<NodeId>(out.kept.size());
      out.kept.push_back(v);
    }
  }
  std::vector<Edge> edges;
  for (const Edge& e : g.edges()) {
    if (comp[e.u] == best) edges.push_back({remap[e.u], remap[e.v]});
  }
  out.graph = Graph::from_edges(static_cast<NodeId>(out.kept.size()), edges);
  if (const auto& labels = g.community_labels()) {
    std::vector<std::uint32_t> sub(out.kept.size());
    for (std::size_t i = 0; i < out.kept.size(); ++i) sub[i] = (*labels)[out.kept[i]];
    out.graph.set_community_labels(std::move(sub));
  }
  return out;
}

Graph lcc(const Graph& g) { return lcc_with_map(g).graph; }

namespace {

/// BFS reachability that ignores removed edges and the edge under test.
class BridgeChecker {
 public:
  explicit BridgeChecker(const Graph& g) : g_(g), stamp_(g.num_nodes(), 0) {}

  void remove(Edge e) { removed_.insert(edge_key(e)); }

  bool still_connected_without(Edge e) {
    ++epoch_;
    queue_.assign(1, e.u);
    stamp_[e.u] = epoch_;
    for (std::size_t head = 0; head < queue_.size(); ++head) {
      const NodeId x = queue_[head];
      for (NodeId y : g_.neighbors(x)) {
        if (stamp_[y] == epoch_) continue;
        const Edge xy = Edge::canonical(x, y);
        if (xy == e || removed_.contains(edge_key(xy))) continue;
        if (y == e.v) return true;
        stamp_[y] = epoch_;
        queue_.push_back(y);
      }
    }
    return false;
  }

 private:
  const Graph& g_;
  std::vector<std::uint32_t> stamp_;
  std::uint32_t epoch_ = 0;
  std::vector<NodeId> queue_;
  std::unordered_set<std::uint64_t> removed_;
};

}  // namespace

EdgeSplit split_edges(const Graph& g, double holdout_fraction, std::uint64_t seed) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw GraphError("holdout fraction must lie in (0,1)");
  }
  if (!is_connected(g)) throw GraphError("split_edges requires a connected graph");

  const std::size_t m = g.num_edges();
  const auto target = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(m)));
  const std::size_t max_removable = g.num_nodes() == 0 ? 0 : m - (g.num_nodes() - 1);
  if (target > max_removable) {
    throw GraphError("cannot hold out " + std::to_string(target) +
                     " edges without disconnecting the graph; at most " +
                     std::to_string(max_removable) + " are removable");
  }

  Rng rng(tagged_seed(seed, StreamTag::split));
  std::vector<Edge> order = g.edges();
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }

  // One pass suffices: an edge rejected as a bridge stays a bridge as more
  // edges are removed, so a full pass always reaches the spanning-tree bound.
  BridgeChecker checker(g);
  std::vector<Edge> heldout;
  heldout.reserve(target);
  for (const Edge& e : order) {
    if (heldout.size() == target) break;
    if (checker.still_connected_without(e)) {
      checker.remove(e);
      heldout.push_back(e);
    }
  }
  if (heldout.size() != target) throw GraphError("edge split failed to reach target count");

  std::unordered_set<std::uint64_t> heldout_keys;
  for (const Edge& e : heldout) heldout_keys.insert(edge_key(e));
  std::vector<Edge> train;
  train.reserve(m - target);
  for (const Edge& e : g.edges()) {
    if (!heldout_keys.contains(edge_key(e))) train.push_back(e);
  }

  const std::uint64_t n = g.num_nodes();
  const std::uint64_t non_edges = n * (n - 1) / 2 - m;
  if (non_edges < target) {
    throw GraphError("graph too dense to sample " + std::to_string(target) + " negative pairs");
  }
  std::vector<Edge> negatives;
  std::unordered_set<std::uint64_t> chosen;
  while (negatives.size() < target) {
    const auto a = static_cast<NodeId>(rng.below(n));
    const auto b = static_cast<NodeId>(rng.below(n));
    if (a == b || g.has_edge(a, b)) continue;
    const Edge e = Edge::canonical(a, b);
    if (chosen.insert(edge_key(e)).second) negatives.push_back(e);
  }

  EdgeSplit split;
  split.train_graph = Graph::from_edges(g.num_nodes(), train);
  if (g.community_labels()) split.train_graph.set_community_labels(*g.community_labels());
  split.heldout_edges = std::move(heldout);
  split.negative_edges = std::move(negatives);
  split.fraction = holdout_fraction;
  split.seed = seed;
  return split;
}

void save_split(const EdgeSplit& split, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_edge_list(split.train_graph, dir / "train.edges");
  save_edges(split.heldout_edges, dir / "heldout.edges");
  save_edges(split.negative_edges, dir / "negative.edges");
  nlohmann::ordered_json manifest;
  manifest["seed"] = split.seed;
  manifest["fraction"] = split.fraction;
  manifest["num_nodes"] = split.train_graph.num_nodes();
  manifest["counts"] = {{"train", split.train_graph.num_edges()},
                        {"heldout", split.heldout_edges.size()},
                        {"negative", split.negative_edges.size()}};
  io::write_file_atomic(dir / "split.json", manifest.dump(2) + "\n");
}

EdgeSplit load_split(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "split.json";
  if (!std::filesystem::exists(manifest_path)) {
    throw GraphError("split manifest not found: " + manifest_path.string());
  }
  const auto manifest = nlohmann::json::parse(io::read_file(manifest_path));
  EdgeSplit split;
  split.seed = manifest.at("seed").get<std::uint64_t>();
  split.fraction = manifest.at("fraction").get<double>();
  const auto n = manifest.at("num_nodes").get<NodeId>();
  split.train_graph = Graph::from_edges(n, load_edges(dir / "train.edges"));
  split.heldout_edges = load_edges(dir / "heldout.edges");
  split.negative_edges = load_edges(dir / "negative.edges");
  const auto& counts = manifest.at("counts");
  if (counts.at("train").get<std::size_t>() != split.train_graph.num_edges() ||
      counts.at("heldout").get<std::size_t>() != split.heldout_edges.size() ||
      counts.at("negative").get<std::size_t>() != split.negative_edges.size()) {
    throw GraphError("split files disagree with split.json counts in " + dir.string());
  }
  return split;
}

}  // namespace fsg

namespace fsg {

Graph stochastic_block_model(std::span<const NodeId> block_sizes, double p_in, double p_out,
                             std::uint64_t seed) {
  std::vector<std::uint32_t> labels;
  for (std::size_t b = 0; b < block_sizes.size(); ++b) {
    labels.insert(labels.end(), block_sizes[b], static_cast<std::uint32_t>(b));
  }
  const auto n = static_cast<NodeId>(labels.size());
  Rng rng(seed);
  std::vector<Edge> edges;
  for (NodeId u = 0; u < n; ++u) {
    for (NodeId v = u + 1; v < n; ++v) {
      const double p = labels[u] == labels[v] ? p_in : p_out;
      if (rng.uniform() < p) edges.push_back({u, v});
    }
  }
  Graph g = Graph::from_edges(n, edges);
  g.set_community_labels(std::move(labels));
  return g;
}

}  // namespace fsg
