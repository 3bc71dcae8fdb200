#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsg/graph.hpp"
#include "fsg/rng.hpp"
#include "fsg/walks.hpp"

namespace fsg {

/// Token ids: nodes are 0..n-1, the start token is n.
using Token = std::uint32_t;

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ModelKind { attention, markov };
std::string to_string(ModelKind kind);

/// Per-walk decoding context. Opaque to callers.
class DecodeState {
 public:
  virtual ~DecodeState() = default;
  /// Tokens consumed so far, start token included.
  virtual std::size_t length() const = 0;
  /// Forgets all tokens so the state can be reused for another walk.
  virtual void reset() = 0;
};

/// Counts forward passes so callers can check how often a model re-reads a
/// prefix. A pass over more than one token is a prefix pass.
struct ForwardCounters {
  std::atomic<std::uint64_t> prefix_passes{0};
  std::atomic<std::uint64_t> prefix_tokens{0};
  std::atomic<std::uint64_t> single_passes{0};

  void reset() {
    prefix_passes = 0;
    prefix_tokens = 0;
    single_passes = 0;
  }
  void record(std::size_t tokens) {
    if (tokens > 1) {
      prefix_passes.fetch_add(1, std::memory_order_relaxed);
      prefix_tokens.fetch_add(tokens, std::memory_order_relaxed);
    } else {
      single_passes.fetch_add(1, std::memory_order_relaxed);
    }
  }
};

/// Autoregressive distribution over the next token given the tokens so far.
/// Implementations are read-only after construction; any number of states may
/// be advanced concurrently.
class NextNodeModel {
 public:
  virtual ~NextNodeModel() = default;
  NextNodeModel() = default;
  NextNodeModel(const NextNodeModel&) = delete;
  NextNodeModel& operator=(const NextNodeModel&) = delete;

  virtual ModelKind kind() const = 0;
  virtual NodeId num_nodes() const = 0;
  /// Longest node prefix the model can condition on (start token excluded).
  virtual std::size_t context_len() const = 0;

  std::size_t vocab_size() const { return std::size_t{num_nodes()} + 1; }
  Token start_token() const { return num_nodes(); }

  virtual std::unique_ptr<DecodeState> new_state() const = 0;

  /// Appends `tokens` to the state and writes unnormalized log-weights of the
  /// next-token distribution (after the last appended token) into `logits`,
  /// which must hold vocab_size() entries. -inf marks impossible tokens.
  void advance(DecodeState& state, std::span<const Token> tokens, std::span<double> logits) const;

  ForwardCounters& counters() const { return counters_; }

 protected:
  virtual void do_advance(DecodeState& state, std::span<const Token> tokens,
                          std::span<double> logits) const = 0;

 private:
  mutable ForwardCounters counters_;
};

/// softmax over all of `logits`.
std::vector<double> softmax(std::span<const double> logits);
/// Entropy in nats of softmax(logits).
double entropy_of_logits(std::span<const double> logits);

/// Full next-token distribution (start token included). The start token is
/// prepended when `prefix` does not begin with it.
std::vector<double> next_distribution(const NextNodeModel& model, std::span<const Token> prefix);

/// Draws a node (never the start token) from softmax(logits / temperature)
/// by inverse CDF with the single uniform `u`. temperature 0 picks the
/// argmax, ties to the smallest id.
NodeId sample_node(std::span<const double> logits, NodeId num_nodes, double temperature, double u);

/// Fills walk[from..] from `model` conditioned on walk[0..from), using one
/// uniform per generated node. The existing prefix is read in a single pass.
/// When `entropies` is given, entropies[t] += entropy of the distribution
/// that produced walk[t].
void extend_walk(const NextNodeModel& model, std::span<NodeId> walk, std::size_t from,
                 double temperature, Rng& rng, std::span<double> entropies = {});
/// Same, reusing `state` (reset first) to avoid reallocating per walk.
void extend_walk(const NextNodeModel& model, DecodeState& state, std::span<NodeId> walk,
                 std::size_t from, double temperature, Rng& rng, std::span<double> entropies = {});

/// Per-walk generation stream.
inline Rng generation_rng(std::uint64_t seed, std::size_t walk) {
  return Rng(stream_seed(tagged_seed(seed, StreamTag::generation), walk));
}

/// Walk i starts at start_nodes[i]; the remaining l-1 nodes are sampled.
WalkMatrix sample_walks(const NextNodeModel& model, std::span<const NodeId> start_nodes,
                        std::size_t l, double temperature, std::uint64_t seed,
                        unsigned workers = 1);

/// n walks whose first node is also drawn from the model (conditioned on the
/// start token).
WalkMatrix generate_walks(const NextNodeModel& model, std::size_t n, std::size_t l,
                          double temperature, std::uint64_t seed, unsigned workers = 1);

/// ln p(walk[i] | start, walk[0..i)) for every position.
std::vector<double> step_log_probs(const NextNodeModel& model, std::span<const NodeId> walk);
double walk_log_prob(const NextNodeModel& model, std::span<const NodeId> walk);

/// Count-based order-1/2 model with additive smoothing over node ids and
/// backoff to lower orders on unseen contexts.
std::unique_ptr<NextNodeModel> fit_markov(const WalkMatrix& corpus, int order, double smoothing);

}  // namespace fsg
