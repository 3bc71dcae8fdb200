#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fsg/detail/aligned.hpp"
#include "fsg/model.hpp"
#include "json.hpp"

namespace fsg {

namespace detail {
struct ModelOffsets;
}

/// Decoder-only attention model shape. context_len counts node tokens; the
/// position table has context_len + 1 rows so the start token fits in front.
struct ModelConfig {
  std::size_t depth = 1;
  std::size_t width = 128;
  std::size_t heads = 4;
  std::size_t context_len = 24;
  NodeId num_nodes = 0;
  double dropout = 0.0;

  std::size_t vocab() const { return std::size_t{num_nodes} + 1; }
  std::size_t positions() const { return context_len + 1; }
  void validate() const;
};

nlohmann::ordered_json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct TrainHyper {
  double lr = 1e-3;
  std::size_t batch = 64;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  std::size_t warmup_steps = 100;
  /// Cosine decay ends at lr * min_lr_ratio.
  double min_lr_ratio = 0.1;
  double grad_clip = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;

  void validate() const;
};

nlohmann::ordered_json to_json(const TrainHyper& h);

struct TrainReport {
  std::size_t epochs = 0;
  std::size_t steps = 0;
  std::uint64_t tokens_per_epoch = 0;
  /// Mean cross-entropy (nats/token) of the last epoch.
  double final_cross_entropy = 0.0;
  std::vector<double> epoch_cross_entropy;
  std::vector<double> step_loss;
  double wall_seconds = 0.0;
  std::size_t parameter_count = 0;
};

nlohmann::ordered_json to_json(const TrainReport& r, bool include_steps = false);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorSpec {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Flat parameter vector layout; the checkpoint stores tensors in this order.
class ParameterLayout {
 public:
  explicit ParameterLayout(const ModelConfig& cfg);
  const std::vector<TensorSpec>& tensors() const { return tensors_; }
  std::size_t total() const { return total_; }
  const TensorSpec& at(const std::string& name) const;

 private:
  void add(std::string name, std::vector<std::size_t> shape);
  std::vector<TensorSpec> tensors_;
  std::size_t total_ = 0;
};

/// Small-std normal weights, unit layer-norm gains, zero biases.
std::vector<float> initial_parameters(const ModelConfig& cfg, std::uint64_t seed);

class TransformerModel final : public NextNodeModel {
 public:
  TransformerModel(ModelConfig cfg, std::vector<float> params);
  ~TransformerModel() override;

  static std::unique_ptr<TransformerModel> initialize(const ModelConfig& cfg, std::uint64_t seed);

  ModelKind kind() const override { return ModelKind::attention; }
  NodeId num_nodes() const override { return cfg_.num_nodes; }
  std::size_t context_len() const override { return cfg_.context_len; }
  std::unique_ptr<DecodeState> new_state() const override;

  const ModelConfig& config() const { return cfg_; }
  const ParameterLayout& layout() const { return layout_; }
  std::span<const float> parameters() const { return params_; }

  /// "FSGM" container: JSON header (format version, kind, config, tensor
  /// names and shapes, free-form `extra`) then f32 tensors in layout order.
  void save(const std::filesystem::path& path, const nlohmann::json& extra = nlohmann::json::object()) const;
  static std::unique_ptr<TransformerModel> load(const std::filesystem::path& path,
                                                nlohmann::json* extra = nullptr);

 protected:
  void do_advance(DecodeState& state, std::span<const Token> tokens,
                  std::span<double> logits) const override;

 private:
  ModelConfig cfg_;
  ParameterLayout layout_;
  aligned_vector<float> params_;
  std::unique_ptr<const detail::ModelOffsets> offsets_;
};

struct TrainProgress {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double epoch_cross_entropy = 0.0;
  double seconds = 0.0;
  /// Weights after this epoch.
  std::span<const float> parameters;
};

struct TrainResult {
  std::unique_ptr<TransformerModel> model;
  TrainReport report;
};

/// Minimizes the mean next-token cross-entropy of the corpus, every walk
/// prefixed by the start token. Deterministic given hyper.seed.
TrainResult train_transformer(const WalkMatrix& corpus, const ModelConfig& cfg,
                              const TrainHyper& hyper,
                              const std::function<void(const TrainProgress&)>& on_epoch = {});

/// Mean cross-entropy of the given corpus rows and, when `grad` is non-null,
/// its gradient with respect to `params` (double precision, no dropout).
double batch_loss(const ModelConfig& cfg, std::span<const double> params, const WalkMatrix& corpus,
                  std::span<const std::size_t> rows, std::vector<double>* grad);

}  // namespace fsg
