#include "fsg/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fsg {

std::string to_string(ModelKind kind) {
  return kind == ModelKind::attention ? "attention" : "markov";
}

void NextNodeModel::advance(DecodeState& state, std::span<const Token> tokens,
                            std::span<double> logits) const {
  if (tokens.empty()) throw ModelError("advance: no tokens given");
  if (logits.size() != vocab_size()) throw ModelError("advance: logits buffer has wrong size");
  for (Token t : tokens) {
    if (t >= vocab_size()) {
      throw ModelError("token " + std::to_string(t) + " outside vocabulary of size " +
                       std::to_string(vocab_size()));
    }
  }
  if (state.length() + tokens.size() > context_len() + 1) {
    throw ModelError("context of " + std::to_string(state.length() + tokens.size()) +
                     " tokens exceeds the model limit of " + std::to_string(context_len() + 1) +
                     " (start token included)");
  }
  counters_.record(tokens.size());
  do_advance(state, tokens, logits);
}

namespace {

double log_sum_exp(std::span<const double> logits) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : logits) m = std::max(m, x);
  if (!std::isfinite(m)) throw ModelError("distribution has no finite log-weight");
  double s = 0.0;
  for (double x : logits) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

std::vector<double> softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] = std::exp(logits[i] - lse);
  return p;
}

double entropy_of_logits(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  double h = 0.0;
  for (double x : logits) {
    if (x == -std::numeric_limits<double>::infinity()) continue;
    const double lp = x - lse;
    h -= std::exp(lp) * lp;
  }
  return std::max(0.0, h);
}

std::vector<double> next_distribution(const NextNodeModel& model, std::span<const Token> prefix) {
  if (prefix.empty()) throw ModelError("next_distribution: empty prefix (pass the start token)");
  std::vector<Token> tokens;
  tokens.reserve(prefix.size() + 1);
  if (prefix.front() != model.start_token()) tokens.push_back(model.start_token());
  tokens.insert(tokens.end(), prefix.begin(), prefix.end());
  if (std::find(tokens.begin() + 1, tokens.end(), model.start_token()) != tokens.end()) {
    throw ModelError("next_distribution: start token may only lead the prefix");
  }
  auto state = model.new_state();
  std::vector<double> logits(model.vocab_size());
  model.advance(*state, tokens, logits);
  return softmax(logits);
}

NodeId sample_node(std::span<const double> logits, NodeId num_nodes, double temperature, double u) {
  if (temperature < 0.0 || !std::isfinite(temperature)) {
    throw ModelError("temperature must be finite and >= 0");
  }
  double m = -std::numeric_limits<double>::infinity();
  NodeId best = 0;
  for (NodeId v = 0; v < num_nodes; ++v) {
    if (logits[v] > m) {
      m = logits[v];
      best = v;
    }
  }
  if (!std::isfinite(m)) throw ModelError("no node has finite probability");
  if (temperature == 0.0) return best;

  double total = 0.0;
  for (NodeId v = 0; v < num_nodes; ++v) total += std::exp((logits[v] - m) / temperature);
  const double target = u * total;
  double cum = 0.0;
  NodeId last_positive = best;
  for (NodeId v = 0; v < num_nodes; ++v) {
    const double w = std::exp((logits[v] - m) / temperature);
    if (w <= 0.0) continue;
    cum += w;
    last_positive = v;
    if (cum > target) return v;
  }
  return last_positive;
}

void extend_walk(const NextNodeModel& model, std::span<NodeId> walk, std::size_t from,
                 double temperature, Rng& rng, std::span<double> entropies) {
  auto state = model.new_state();
  extend_walk(model, *state, walk, from, temperature, rng, entropies);
}

void extend_walk(const NextNodeModel& model, DecodeState& state, std::span<NodeId> walk,
                 std::size_t from, double temperature, Rng& rng, std::span<double> entropies) {
  if (from > walk.size()) throw ModelError("extend_walk: prefix longer than walk");
  if (from == walk.size()) return;
  if (!entropies.empty() && entropies.size() < walk.size()) {
    throw ModelError("extend_walk: entropy buffer shorter than walk");
  }
  const NodeId n = model.num_nodes();
  std::vector<Token> prefix;
  prefix.reserve(from + 1);
  prefix.push_back(model.start_token());
  for (std::size_t t = 0; t < from; ++t) {
    if (walk[t] >= n) throw ModelError("extend_walk: node id out of range");
    prefix.push_back(walk[t]);
  }
  state.reset();
  std::vector<double> logits(model.vocab_size());
  model.advance(state, prefix, logits);
  for (std::size_t t = from; t < walk.size(); ++t) {
    if (!entropies.empty()) entropies[t] += entropy_of_logits(logits);
    walk[t] = sample_node(logits, n, temperature, rng.uniform());
    if (t + 1 < walk.size()) {
      const Token next = walk[t];
      model.advance(state, std::span<const Token>(&next, 1), logits);
    }
  }
}

namespace {

void check_length(const NextNodeModel& model, std::size_t l) {
  if (l == 0) throw ModelError("walk length must be positive");
  if (l > model.context_len() + 1) {
    throw ModelError("walk length " + std::to_string(l) + " exceeds context_len+1 = " +
                     std::to_string(model.context_len() + 1));
  }
}

}  // namespace

WalkMatrix sample_walks(const NextNodeModel& model, std::span<const NodeId> start_nodes,
                        std::size_t l, double temperature, std::uint64_t seed, unsigned workers) {
  check_length(model, l);
  for (NodeId s : start_nodes) {
    if (s >= model.num_nodes()) throw ModelError("start node out of range");
  }
  WalkMatrix out(start_nodes.size(), l, model.num_nodes());
  parallel_blocks(start_nodes.size(), workers, [&](std::size_t begin, std::size_t end) {
    auto state = model.new_state();
    for (std::size_t i = begin; i < end; ++i) {
      auto walk = out.row(i);
      walk[0] = start_nodes[i];
      Rng rng = generation_rng(seed, i);
      extend_walk(model, *state, walk, 1, temperature, rng);
    }
  });
  return out;
}

WalkMatrix generate_walks(const NextNodeModel& model, std::size_t n, std::size_t l,
                          double temperature, std::uint64_t seed, unsigned workers) {
  check_length(model, l);
  WalkMatrix out(n, l, model.num_nodes());
  parallel_blocks(n, workers, [&](std::size_t begin, std::size_t end) {
    auto state = model.new_state();
    for (std::size_t i = begin; i < end; ++i) {
      Rng rng = generation_rng(seed, i);
      extend_walk(model, *state, out.row(i), 0, temperature, rng);
    }
  });
  return out;
}

std::vector<double> step_log_probs(const NextNodeModel& model, std::span<const NodeId> walk) {
  if (walk.empty()) throw ModelError("walk_log_prob: empty walk");
  for (NodeId v : walk) {
    if (v >= model.num_nodes()) {
      throw ModelError("walk_log_prob: node " + std::to_string(v) + " outside vocabulary");
    }
  }
  auto state = model.new_state();
  std::vector<double> logits(model.vocab_size());
  std::vector<double> out;
  out.reserve(walk.size());
  Token token = model.start_token();
  for (std::size_t i = 0; i < walk.size(); ++i) {
    model.advance(*state, std::span<const Token>(&token, 1), logits);
    out.push_back(logits[walk[i]] - log_sum_exp(logits));
    token = walk[i];
  }
  return out;
}

double walk_log_prob(const NextNodeModel& model, std::span<const NodeId> walk) {
  double total = 0.0;
  for (double lp : step_log_probs(model, walk)) total += lp;
  return total;
}

}  // namespace fsg
