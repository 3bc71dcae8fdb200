#include <cmath>
#include <cstring>
#include <numeric>

#include "doctest.h"
#include "fsg/blob_file.hpp"
#include "fsg/transformer.hpp"
#include "test_support.hpp"

using namespace fsg;

namespace {

ModelConfig small_config(NodeId n, std::size_t depth = 2) {
  ModelConfig cfg;
  cfg.depth = depth;
  cfg.width = 16;
  cfg.heads = 2;
  cfg.context_len = 8;
  cfg.num_nodes = n;
  return cfg;
}

WalkMatrix small_corpus(std::size_t m = 200, std::size_t k = 6) {
  return build_corpus(testing::eight_node_graph(), m, k, {}, 1);
}

std::vector<double> to_double(std::span<const float> p) { return {p.begin(), p.end()}; }

}  // namespace

TEST_CASE("config validation") {
  ModelConfig cfg = small_config(8);
  CHECK_NOTHROW(cfg.validate());
  cfg.heads = 3;
  CHECK_THROWS(cfg.validate());
  cfg = small_config(8);
  cfg.depth = 0;
  CHECK_THROWS(cfg.validate());
  cfg = small_config(8);
  cfg.dropout = 1.0;
  CHECK_THROWS(cfg.validate());
  cfg = small_config(0);
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("parameter layout covers the flat vector") {
  const ModelConfig cfg = small_config(8, 3);
  const ParameterLayout layout(cfg);
  std::size_t offset = 0;
  for (const auto& t : layout.tensors()) {
    CHECK(t.offset == offset);
    CHECK(t.size == std::accumulate(t.shape.begin(), t.shape.end(), std::size_t{1}, std::multiplies<>()));
    offset += t.size;
  }
  CHECK(offset == layout.total());
  CHECK(layout.at("tok_emb").shape == std::vector<std::size_t>{9, 16});
  CHECK(layout.at("pos_emb").shape == std::vector<std::size_t>{9, 16});
  CHECK(initial_parameters(cfg, 1).size() == layout.total());
}

TEST_CASE("analytic gradients match central differences") {
  const WalkMatrix corpus = small_corpus(16, 6);
  const ModelConfig cfg = small_config(8, 2);
  const auto init = initial_parameters(cfg, 3);
  std::vector<double> params = to_double(init);
  // larger weights than the init so every path carries signal
  Rng rng(5);
  for (double& p : params) p += 0.2 * rng.normal();
  std::vector<std::size_t> rows(corpus.num_walks());
  std::iota(rows.begin(), rows.end(), 0);
  std::vector<double> grad;
  batch_loss(cfg, params, corpus, rows, &grad);
  REQUIRE(grad.size() == params.size());

  const double h = 1e-5;
  std::size_t checked = 0;
  double worst = 0.0;
  for (int i = 0; i < 150; ++i) {
    const std::size_t c = rng.below(params.size());
    const double saved = params[c];
    params[c] = saved + h;
    const double up = batch_loss(cfg, params, corpus, rows, nullptr);
    params[c] = saved - h;
    const double down = batch_loss(cfg, params, corpus, rows, nullptr);
    params[c] = saved;
    const double fd = (up - down) / (2 * h);
    const double err = testing::rel_diff(grad[c], fd, 1e-6);
    worst = std::max(worst, err);
    ++checked;
  }
  MESSAGE("worst relative gradient error " << worst);
  CHECK(checked >= 100);
  CHECK(worst <= 1e-3);
}

TEST_CASE("float inference agrees with the double-precision loss") {
  const WalkMatrix corpus = small_corpus(20, 6);
  const ModelConfig cfg = small_config(8, 2);
  const auto params = initial_parameters(cfg, 9);
  const TransformerModel model(cfg, params);
  std::vector<std::size_t> rows(corpus.num_walks());
  std::iota(rows.begin(), rows.end(), 0);
  const double ce = batch_loss(cfg, to_double(params), corpus, rows, nullptr);
  double total = 0.0;
  for (std::size_t i = 0; i < corpus.num_walks(); ++i) total -= walk_log_prob(model, corpus.row(i));
  CHECK(total / (corpus.num_walks() * 6.0) == doctest::Approx(ce).epsilon(1e-5));
}

TEST_CASE("next distribution sums to one and walk log-probs add up") {
  const ModelConfig cfg = small_config(8, 2);
  auto model = TransformerModel::initialize(cfg, 4);
  const WalkMatrix walks = generate_walks(*model, 20, 9, 1.0, 2);
  for (std::size_t i = 0; i < walks.num_walks(); ++i) {
    const auto row = walks.row(i);
    std::vector<Token> prefix = {model->start_token()};
    double total = 0.0;
    for (std::size_t t = 0; t < row.size(); ++t) {
      const auto p = next_distribution(*model, prefix);
      const double sum = std::accumulate(p.begin(), p.end(), 0.0);
      REQUIRE(std::abs(sum - 1.0) <= 1e-6);
      total += std::log(p[row[t]]);
      prefix.push_back(row[t]);
    }
    REQUIRE(testing::rel_diff(walk_log_prob(*model, row), total) <= 1e-9);
  }
}

TEST_CASE("one-pass prefill equals token-by-token decoding bitwise") {
  const ModelConfig cfg = small_config(8, 3);
  auto model = TransformerModel::initialize(cfg, 6);
  const std::vector<Token> tokens = {8, 3, 1, 4, 1, 5, 2, 6};
  std::vector<double> a(model->vocab_size());
  std::vector<double> b(model->vocab_size());
  auto s1 = model->new_state();
  model->advance(*s1, tokens, a);
  auto s2 = model->new_state();
  for (Token t : tokens) model->advance(*s2, std::span<const Token>(&t, 1), b);
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
  // split prefill as well
  auto s3 = model->new_state();
  model->advance(*s3, std::span(tokens).first(3), b);
  model->advance(*s3, std::span(tokens).subspan(3), b);
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
  // a reset state behaves like a fresh one
  s1->reset();
  model->advance(*s1, tokens, b);
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("context limit is enforced") {
  const ModelConfig cfg = small_config(8, 1);
  auto model = TransformerModel::initialize(cfg, 1);
  CHECK_NOTHROW(generate_walks(*model, 2, 9, 1.0, 1));
  CHECK_THROWS_AS(generate_walks(*model, 2, 10, 1.0, 1), ModelError);
}

TEST_CASE("checkpoint round trip") {
  testing::TempDir dir("ckpt");
  const ModelConfig cfg = small_config(8, 2);
  auto model = TransformerModel::initialize(cfg, 2);
  model->save(dir / "m.ckpt", {{"note", "hello"}});
  nlohmann::json extra;
  auto back = TransformerModel::load(dir / "m.ckpt", &extra);
  CHECK(extra.at("note") == "hello");
  CHECK(back->config().depth == 2);
  CHECK(std::equal(back->parameters().begin(), back->parameters().end(), model->parameters().begin()));
  const std::vector<Token> prefix = {8, 1, 2};
  CHECK(next_distribution(*back, prefix) == next_distribution(*model, prefix));

  std::string bytes = io::read_file(dir / "m.ckpt");
  bytes[0] = 'X';
  io::write_file_atomic(dir / "bad.ckpt", bytes);
  CHECK_THROWS(TransformerModel::load(dir / "bad.ckpt"));
  bytes = io::read_file(dir / "m.ckpt");
  bytes.resize(bytes.size() - 4);
  io::write_file_atomic(dir / "short.ckpt", bytes);
  CHECK_THROWS(TransformerModel::load(dir / "short.ckpt"));
}

TEST_CASE("training lowers the loss and is deterministic") {
  const WalkMatrix corpus = small_corpus(400, 6);
  const ModelConfig cfg = small_config(8, 1);
  TrainHyper hyper;
  hyper.epochs = 3;
  hyper.batch = 32;
  hyper.lr = 3e-3;
  hyper.warmup_steps = 5;
  hyper.seed = 4;
  std::size_t calls = 0;
  auto a = train_transformer(corpus, cfg, hyper, [&](const TrainProgress& p) {
    ++calls;
    CHECK(p.epoch == calls);
  });
  CHECK(calls == 3);
  const auto& ce = a.report.epoch_cross_entropy;
  REQUIRE(ce.size() == 3);
  CHECK(ce[2] < ce[0]);
  CHECK(a.report.final_cross_entropy == ce[2]);
  CHECK(a.report.steps == 3 * ((400 + 31) / 32));
  CHECK(a.report.tokens_per_epoch == 400 * 6);
  CHECK(a.report.parameter_count == ParameterLayout(a.model->config()).total());
  // uniform over 9 tokens is ln 9; a trained model beats it
  CHECK(ce[2] < std::log(9.0));

  auto b = train_transformer(corpus, cfg, hyper);
  CHECK(std::equal(a.model->parameters().begin(), a.model->parameters().end(),
                   b.model->parameters().begin()));
  hyper.seed = 5;
  auto c = train_transformer(corpus, cfg, hyper);
  CHECK_FALSE(std::equal(a.model->parameters().begin(), a.model->parameters().end(),
                         c.model->parameters().begin()));
}

TEST_CASE("training rejects a corpus longer than the context") {
  const WalkMatrix corpus = small_corpus(10, 12);
  TrainHyper hyper;
  CHECK_THROWS(train_transformer(corpus, small_config(8, 1), hyper));
}

TEST_CASE("dropout training stays deterministic") {
  const WalkMatrix corpus = small_corpus(128, 6);
  ModelConfig cfg = small_config(8, 2);
  cfg.dropout = 0.1;
  TrainHyper hyper;
  hyper.seed = 1;
  auto a = train_transformer(corpus, cfg, hyper);
  auto b = train_transformer(corpus, cfg, hyper);
  CHECK(std::equal(a.model->parameters().begin(), a.model->parameters().end(),
                   b.model->parameters().begin()));
}

TEST_CASE("deeper model fits the corpus at least as well") {
  // 300-node SBM, k = 16; equal data, seed and epochs
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const Graph g = testing::desk_sbm(seed);
    const WalkMatrix corpus = build_corpus(g, 6000, 16, {}, seed);
    ModelConfig cfg;
    cfg.num_nodes = g.num_nodes();
    cfg.context_len = 16;
    TrainHyper hyper;
    hyper.seed = seed;
    hyper.epochs = 1;
    cfg.depth = 1;
    const double shallow = train_transformer(corpus, cfg, hyper).report.final_cross_entropy;
    cfg.depth = 6;
    const double deep = train_transformer(corpus, cfg, hyper).report.final_cross_entropy;
    MESSAGE("seed " << seed << ": depth 1 " << shallow << ", depth 6 " << deep);
    CHECK(deep <= shallow);
  }
}
