#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "fsg/model.hpp"

namespace fsg {

namespace {

struct Row {
  std::vector<std::pair<NodeId, std::uint64_t>> counts;  // sorted by node
  std::uint64_t total = 0;
};

using RowMap = std::unordered_map<std::uint64_t, Row>;

class MarkovState final : public DecodeState {
 public:
  std::size_t length() const override { return length_; }
  void reset() override { prev = last = 0, length_ = 0; }
  Token prev = 0;
  Token last = 0;
  std::size_t length_ = 0;
};

class MarkovModel final : public NextNodeModel {
 public:
  MarkovModel(NodeId n, int order, double smoothing, RowMap order1, RowMap order2, Row unigram)
      : n_(n),
        order_(order),
        smoothing_(smoothing),
        order1_(std::move(order1)),
        order2_(std::move(order2)),
        unigram_(std::move(unigram)) {}

  ModelKind kind() const override { return ModelKind::markov; }
  NodeId num_nodes() const override { return n_; }
  std::size_t context_len() const override { return std::numeric_limits<std::uint32_t>::max(); }
  std::unique_ptr<DecodeState> new_state() const override { return std::make_unique<MarkovState>(); }

 protected:
  void do_advance(DecodeState& base, std::span<const Token> tokens,
                  std::span<double> logits) const override {
    auto& state = static_cast<MarkovState&>(base);
    for (Token t : tokens) {
      state.prev = state.last;
      state.last = t;
      ++state.length_;
    }
    const Row* row = nullptr;
    if (order_ == 2 && state.length_ >= 2) row = find(order2_, key(state.prev, state.last));
    if (!row) row = find(order1_, state.last);
    if (!row) row = &unigram_;
    fill(*row, logits);
  }

 private:
  static std::uint64_t key(Token a, Token b) { return (std::uint64_t{a} << 32) | b; }

  static const Row* find(const RowMap& rows, std::uint64_t k) {
    auto it = rows.find(k);
    return it == rows.end() || it->second.total == 0 ? nullptr : &it->second;
  }

  void fill(const Row& row, std::span<double> logits) const {
    const double denom = static_cast<double>(row.total) + smoothing_ * n_;
    const double floor = smoothing_ > 0.0 ? std::log(smoothing_ / denom)
                                          : -std::numeric_limits<double>::infinity();
    std::fill(logits.begin(), logits.end(), floor);
    logits[n_] = -std::numeric_limits<double>::infinity();
    for (const auto& [v, c] : row.counts) {
      logits[v] = std::log((static_cast<double>(c) + smoothing_) / denom);
    }
  }

  NodeId n_;
  int order_;
  double smoothing_;
  RowMap order1_;
  RowMap order2_;
  Row unigram_;
};

Row finish(const std::unordered_map<NodeId, std::uint64_t>& counts) {
  Row row;
  row.counts.assign(counts.begin(), counts.end());
  std::sort(row.counts.begin(), row.counts.end());
  for (const auto& entry : row.counts) row.total += entry.second;
  return row;
}

}  // namespace

std::unique_ptr<NextNodeModel> fit_markov(const WalkMatrix& corpus, int order, double smoothing) {
  if (order != 1 && order != 2) throw ModelError("markov order must be 1 or 2");
  if (!(smoothing >= 0.0) || !std::isfinite(smoothing)) {
    throw ModelError("markov smoothing must be finite and >= 0");
  }
  if (corpus.num_walks() == 0 || corpus.walk_length() == 0) {
    throw ModelError("markov fit needs a nonempty corpus");
  }
  const NodeId n = corpus.num_nodes();
  const Token start = n;
  std::unordered_map<std::uint64_t, std::unordered_map<NodeId, std::uint64_t>> c1;
  std::unordered_map<std::uint64_t, std::unordered_map<NodeId, std::uint64_t>> c2;
  std::unordered_map<NodeId, std::uint64_t> uni;
  for (std::size_t i = 0; i < corpus.num_walks(); ++i) {
    const auto walk = corpus.row(i);
    Token prev = start;
    Token last = start;
    for (std::size_t t = 0; t < walk.size(); ++t) {
      const NodeId v = walk[t];
      ++uni[v];
      ++c1[last][v];
      if (t >= 1) ++c2[(std::uint64_t{prev} << 32) | last][v];
      prev = last;
      last = v;
    }
  }
  RowMap order1;
  RowMap order2;
  for (const auto& [k, counts] : c1) order1.emplace(k, finish(counts));
  if (order == 2) {
    for (const auto& [k, counts] : c2) order2.emplace(k, finish(counts));
  }
  return std::make_unique<MarkovModel>(n, order, smoothing, std::move(order1), std::move(order2),
                                       finish(uni));
}

}  // namespace fsg
