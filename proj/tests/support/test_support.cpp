#include "test_support.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <random>

namespace fsg::testing {

TempDir::TempDir(const std::string& tag) {
  std::random_device rd;
  path_ = std::filesystem::temp_directory_path() /
          ("fsg_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

Graph eight_node_graph() {
  const std::vector<Edge> edges = {{0, 1}, {0, 2}, {1, 2}, {1, 3}, {2, 4}, {3, 4},
                                   {3, 5}, {4, 5}, {5, 6}, {6, 7}, {2, 3}};
  return Graph::from_edges(8, edges);
}

Graph desk_sbm(std::uint64_t seed) {
  const std::vector<NodeId> blocks(4, 75);
  return lcc(stochastic_block_model(blocks, 0.1, 0.005, seed));
}

std::vector<double> brute_force_transition(const Graph& g, NodeId t, NodeId v, double p, double q) {
  // BFS distances from t.
  std::vector<int> dist(g.num_nodes(), -1);
  std::deque<NodeId> queue{t};
  dist[t] = 0;
  while (!queue.empty()) {
    const NodeId a = queue.front();
    queue.pop_front();
    for (NodeId b : g.neighbors(a)) {
      if (dist[b] < 0) {
        dist[b] = dist[a] + 1;
        queue.push_back(b);
      }
    }
  }
  std::vector<double> w(g.num_nodes(), 0.0);
  double total = 0.0;
  for (NodeId x : g.neighbors(v)) {
    const double alpha = dist[x] == 0 ? 1.0 / p : dist[x] == 1 ? 1.0 : 1.0 / q;
    w[x] = alpha;
    total += alpha;
  }
  for (double& x : w) x /= total;
  return w;
}

std::size_t brute_force_knee(std::span<const double> curve, double sensitivity) {
  const std::size_t L = curve.size();
  double lo = curve[0];
  double hi = curve[0];
  for (double c : curve) {
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  }
  if (L < 3 || hi == lo) throw std::runtime_error("no knee");
  auto diff = [&](std::size_t i) {
    return static_cast<double>(i) / static_cast<double>(L - 1) - (curve[i] - lo) / (hi - lo);
  };
  // Single left-to-right pass holding the most recent local maximum.
  bool armed = false;
  std::size_t candidate = 0;
  double threshold = 0.0;
  for (std::size_t k = 1; k < L; ++k) {
    const bool peak = k + 1 < L && diff(k) > diff(k - 1) && diff(k) >= diff(k + 1);
    if (peak) {
      armed = true;
      candidate = k;
      threshold = diff(k) - sensitivity / static_cast<double>(L - 1);
    } else if (armed && diff(k) < threshold) {
      return candidate + 1;
    }
  }
  std::size_t best = 1;
  double best_rise = curve[1] - curve[0];
  for (std::size_t i = 2; i < L; ++i) {
    if (curve[i] - curve[i - 1] > best_rise) {
      best = i;
      best_rise = curve[i] - curve[i - 1];
    }
  }
  return best;
}

namespace {

struct ReplayState final : DecodeState {
  std::vector<Token> tokens;
  std::size_t length() const override { return tokens.size(); }
  void reset() override { tokens.clear(); }
};

}  // namespace

CorpusReplayModel::CorpusReplayModel(const WalkMatrix& corpus)
    : n_(corpus.num_nodes()), k_(corpus.walk_length()) {
  for (std::size_t i = 0; i < corpus.num_walks(); ++i) {
    std::vector<Token> prefix{n_};
    for (std::size_t t = 0; t < k_; ++t) {
      const Token next = corpus.at(i, t);
      ++next_[prefix][next];
      prefix.push_back(next);
    }
  }
}

std::unique_ptr<DecodeState> CorpusReplayModel::new_state() const {
  return std::make_unique<ReplayState>();
}

void CorpusReplayModel::do_advance(DecodeState& state, std::span<const Token> tokens,
                                   std::span<double> logits) const {
  auto& s = static_cast<ReplayState&>(state);
  s.tokens.insert(s.tokens.end(), tokens.begin(), tokens.end());
  std::fill(logits.begin(), logits.end(), -std::numeric_limits<double>::infinity());
  const auto it = next_.find(s.tokens);
  if (it == next_.end()) throw ModelError("replay: prefix not in corpus");
  for (const auto& [tok, count] : it->second) logits[tok] = std::log(static_cast<double>(count));
}

double rel_diff(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace fsg::testing
