#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fsg/assembly.hpp"
#include "fsg/bloom.hpp"
#include "fsg/transformer.hpp"
#include "json.hpp"

namespace fsg {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct ModelSection {
  ModelConfig model;
  TrainHyper hyper;
  std::optional<std::uint64_t> seed;
};

/// Everything a pipeline run needs. Stage seeds default to `seed`.
struct RunConfig {
  std::filesystem::path graph;
  std::filesystem::path labels;
  std::filesystem::path out_dir = "run";
  unsigned workers = 1;
  std::uint64_t seed = 1;

  double split_fraction = 0.2;
  std::optional<std::uint64_t> split_seed;

  std::size_t walks_m = 50'000;
  std::size_t walks_k = 16;
  double p_param = 1.0;
  double q_param = 1.0;
  std::optional<std::uint64_t> walks_seed;

  ModelSection fast;
  ModelSection slow;

  BloomParams filter;
  std::size_t filter_window = 4;

  std::size_t switch_n_walks = 10'000;
  std::size_t switch_len = 24;
  double sensitivity = 1.0;
  std::optional<std::size_t> fixed_j;
  std::optional<std::uint64_t> switch_seed;

  std::size_t gen_n_walks = 20'000;
  std::size_t gen_len = 24;
  double temperature = 1.0;
  /// all | fast | slow | cascade
  std::string gen_mode = "all";
  std::optional<std::uint64_t> gen_seed;

  AssemblyMode assembly_mode = AssemblyMode::top_e;
  /// 0 means the training graph's edge count.
  std::size_t target_edges = 0;
  std::optional<std::uint64_t> assembly_seed;

  RunConfig();

  /// Sets one key; unknown keys and malformed values throw ConfigError.
  void set(std::string_view key, std::string_view value);
  /// Checks every field before any work starts. A single-stage check skips
  /// the input graph and the checks that tie stages together.
  enum class Scope { pipeline, stage };
  void validate(Scope scope = Scope::pipeline) const;
  /// All keys with resolved values, in a fixed order.
  std::vector<std::pair<std::string, std::string>> entries() const;
  static std::vector<std::string> keys();

  std::uint64_t resolved(const std::optional<std::uint64_t>& s) const { return s.value_or(seed); }
};

/// Flat "key = value" text; '#' starts a comment; blank lines ignored.
void apply_config_text(RunConfig& cfg, std::string_view text, const std::string& source);
/// Defaults, then the file (when given), then "key=value" overrides.
RunConfig load_run_config(const std::optional<std::filesystem::path>& file,
                          const std::vector<std::string>& overrides);

/// fast, slow and cascade for mode "all", else the single mode.
std::vector<std::string> generation_modes(const RunConfig& cfg);

/// One function per stage. Each reads and writes fixed artifact names under
/// cfg.out_dir and fails naming the producing subcommand when an input is
/// missing. The returned JSON is the stage summary.
namespace stages {
nlohmann::ordered_json prepare(const RunConfig& cfg, std::ostream& log);
nlohmann::ordered_json split(const RunConfig& cfg, std::ostream& log);
nlohmann::ordered_json sample_walks(const RunConfig& cfg, std::ostream& log);
nlohmann::ordered_json train(const RunConfig& cfg, const std::string& role, std::ostream& log);
nlohmann::ordered_json build_filter(const RunConfig& cfg, std::ostream& log);
nlohmann::ordered_json curves(const RunConfig& cfg, std::ostream& log);
nlohmann::ordered_json knee(const RunConfig& cfg, std::ostream& log);
nlohmann::ordered_json generate(const RunConfig& cfg, std::ostream& log);
nlohmann::ordered_json assemble(const RunConfig& cfg, std::ostream& log);
nlohmann::ordered_json eval(const RunConfig& cfg, std::ostream& log);
}  // namespace stages

/// Runs every stage, skipping those whose stamped inputs and outputs still
/// match. Returns the manifest that was written to out_dir/manifest.json.
/// On a stage failure a manifest marked failed is written and StageError
/// is rethrown.
nlohmann::ordered_json run_pipeline(const RunConfig& cfg, std::ostream& log);

/// Artifact names under the output directory.
namespace artifacts {
inline constexpr const char* lcc_edges = "lcc.edges";
inline constexpr const char* id_map = "id_map.txt";
inline constexpr const char* graph_info = "graph.json";
inline constexpr const char* labels = "labels.txt";
inline constexpr const char* split_dir = "split";
inline constexpr const char* walks = "walks.bin";
inline constexpr const char* fast_model = "fast.ckpt";
inline constexpr const char* slow_model = "slow.ckpt";
inline constexpr const char* filter = "filter.bloom";
inline constexpr const char* curves_csv = "curves.csv";
inline constexpr const char* curves_json = "curves.json";
inline constexpr const char* handover = "handover.json";
inline constexpr const char* generation = "generation.json";
inline constexpr const char* eval_csv = "eval.csv";
inline constexpr const char* manifest = "manifest.json";
std::string generated_walks(const std::string& mode);
std::string assembled(const std::string& mode);
std::string eval_report(const std::string& mode);
}  // namespace artifacts

}  // namespace fsg
