#include "fsg/walks.hpp"

#include <cstring>
#include <string>

#include "fsg/blob_file.hpp"

namespace fsg {

namespace {

constexpr char kWalkMagic[4] = {'W', 'L', 'K', 'M'};
constexpr std::uint32_t kWalkVersion = 1;

/// Calls fn(x, weight) for every x in Adj(v), in adjacency order. Adjacency
/// to t is resolved by merging the two sorted lists.
template <typename Fn>
void for_each_weighted(const Graph& g, NodeId t, NodeId v, const SamplerParams& params, Fn&& fn) {
  const auto nv = g.neighbors(v);
  const auto nt = g.neighbors(t);
  const double w_return = 1.0 / params.p;
  const double w_out = 1.0 / params.q;
  std::size_t j = 0;
  for (NodeId x : nv) {
    while (j < nt.size() && nt[j] < x) ++j;
    double w = w_out;
    if (x == t) {
      w = w_return;
    } else if (j < nt.size() && nt[j] == x) {
      w = 1.0;
    }
    fn(x, w);
  }
}

}  // namespace

void SamplerParams::validate() const {
  if (!(p > 0.0) || !(q > 0.0)) throw WalkError("sampler parameters p and q must be positive");
}

double transition_weight(const Graph& g, NodeId t, NodeId x, const SamplerParams& params) {
  if (x == t) return 1.0 / params.p;
  if (g.has_edge(t, x)) return 1.0;
  return 1.0 / params.q;
}

NodeId second_order_step(const Graph& g, NodeId t, NodeId v, const SamplerParams& params,
                         Rng& rng) {
  if (!g.has_edge(t, v)) {
    throw WalkError("second_order_step: (" + std::to_string(t) + "," + std::to_string(v) +
                    ") is not an edge");
  }
  double total = 0.0;
  for_each_weighted(g, t, v, params, [&](NodeId, double w) { total += w; });
  const double target = rng.uniform() * total;
  double acc = 0.0;
  NodeId chosen = g.neighbors(v).back();
  bool found = false;
  for_each_weighted(g, t, v, params, [&](NodeId x, double w) {
    if (found) return;
    acc += w;
    if (target < acc) {
      chosen = x;
      found = true;
    }
  });
  return chosen;
}

std::vector<NodeId> sample_walk(const Graph& g, NodeId start, std::size_t k,
                                const SamplerParams& params, Rng& rng) {
  if (k < 2) throw WalkError("walk length must be at least 2");
  if (start >= g.num_nodes()) throw WalkError("start node out of range");
  const auto first = g.neighbors(start);
  if (first.empty()) throw WalkError("start node " + std::to_string(start) + " has no neighbors");
  std::vector<NodeId> walk;
  walk.reserve(k);
  walk.push_back(start);
  walk.push_back(first[rng.below(first.size())]);
  while (walk.size() < k) {
    walk.push_back(second_order_step(g, walk[walk.size() - 2], walk.back(), params, rng));
  }
  return walk;
}

WalkMatrix build_corpus(const Graph& g, std::size_t m, std::size_t k, const SamplerParams& params,
                        std::uint64_t seed, unsigned workers) {
  if (m < 1) throw WalkError("corpus needs at least one walk");
  if (k < 2) throw WalkError("walk length must be at least 2");
  if (g.empty()) throw WalkError("cannot sample walks on an empty graph");
  params.validate();
  WalkMatrix corpus(m, k, g.num_nodes());
  const std::uint64_t base = tagged_seed(seed, StreamTag::corpus_walk);
  parallel_for(m, workers, [&](std::size_t i) {
    Rng rng(stream_seed(base, i));
    const auto start = static_cast<NodeId>(rng.below(g.num_nodes()));
    const auto walk = sample_walk(g, start, k, params, rng);
    std::copy(walk.begin(), walk.end(), corpus.row(i).begin());
  });
  return corpus;
}

void save_walks(const WalkMatrix& walks, const std::filesystem::path& path) {
  std::string out;
  out.reserve(24 + walks.data().size_bytes());
  out.append(kWalkMagic, 4);
  io::append_pod(out, kWalkVersion);
  io::append_pod(out, static_cast<std::uint64_t>(walks.num_walks()));
  io::append_pod(out, static_cast<std::uint32_t>(walks.walk_length()));
  io::append_pod(out, static_cast<std::uint32_t>(walks.num_nodes()));
  io::append_span(out, walks.data());
  io::write_file_atomic(path, out);
}

WalkMatrix load_walks(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw WalkError("walk file not found: " + path.string());
  const std::string bytes = io::read_file(path);
  io::ByteReader reader(bytes);
  char magic[4];
  reader.read_into(std::span<char>(magic, 4));
  if (std::memcmp(magic, kWalkMagic, 4) != 0) throw WalkError(path.string() + ": not a WLKM file");
  const auto version = reader.read<std::uint32_t>();
  if (version != kWalkVersion) {
    throw WalkError(path.string() + ": unsupported WLKM version " + std::to_string(version));
  }
  const auto m = reader.read<std::uint64_t>();
  const auto k = reader.read<std::uint32_t>();
  const auto n = reader.read<std::uint32_t>();
  if (reader.remaining() != m * k * sizeof(NodeId)) {
    throw WalkError(path.string() + ": payload size does not match header");
  }
  WalkMatrix walks(m, k, n);
  for (std::size_t i = 0; i < m; ++i) reader.read_into(walks.row(i));
  for (NodeId id : walks.data()) {
    if (id >= n) throw WalkError(path.string() + ": node id out of range");
  }
  return walks;
}

void save_walks_text(const WalkMatrix& walks, const std::filesystem::path& path) {
  std::string out;
  for (std::size_t i = 0; i < walks.num_walks(); ++i) {
    const auto row = walks.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) out += ' ';
      out += std::to_string(row[j]);
    }
    out += '\n';
  }
  io::write_file_atomic(path, out);
}

}  // namespace fsg
