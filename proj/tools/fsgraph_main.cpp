#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fsg/blob_file.hpp"
#include "fsg/graph.hpp"
#include "fsg/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_config = 2;
constexpr int exit_stage = 3;

/// A flag that, when given, sets one RunConfig key. Defaults come from
/// RunConfig so the CLI and the pipeline never disagree.
struct KeyFlag {
  CLI::Option* option = nullptr;
  std::string key;
  std::string value;
};

class Subcommand {
 public:
  Subcommand(CLI::App& app, const std::string& name, const std::string& help)
      : sub_(app.add_subcommand(name, help)) {
    key("--dir", "out_dir", "run directory holding every artifact");
    key("--workers", "workers", "worker threads");
  }

  CLI::App* app() const { return sub_; }

  Subcommand& key(const std::string& flag, const std::string& cfg_key, const std::string& help) {
    flags_.push_back(std::make_unique<KeyFlag>());
    auto& f = *flags_.back();
    f.key = cfg_key;
    f.option = sub_->add_option(flag, f.value, help);
    for (const auto& [k, v] : fsg::RunConfig().entries()) {
      if (k == cfg_key) f.option->default_str(v);
    }
    return *this;
  }

  /// Sets every given flag; keys under `from.` are redirected to `to.`.
  void apply(fsg::RunConfig& cfg, const std::string& from = {}, const std::string& to = {}) const {
    for (const auto& f : flags_) {
      if (f->option->count() == 0) continue;
      std::string k = f->key;
      if (!from.empty() && k.starts_with(from + ".")) k = to + k.substr(from.size());
      cfg.set(k, f->value);
    }
  }

 private:
  CLI::App* sub_;
  std::vector<std::unique_ptr<KeyFlag>> flags_;
};

void add_model_keys(Subcommand& s, const std::string& role) {
  s.key("--depth", role + ".depth", "transformer blocks")
      .key("--width", role + ".width", "embedding width")
      .key("--heads", role + ".heads", "attention heads")
      .key("--context-len", role + ".context_len", "node tokens the model can condition on")
      .key("--dropout", role + ".dropout", "dropout rate")
      .key("--lr", role + ".lr", "peak learning rate")
      .key("--batch", role + ".batch", "walks per step")
      .key("--epochs", role + ".epochs", "passes over the corpus")
      .key("--warmup-steps", role + ".warmup_steps", "linear warmup steps")
      .key("--min-lr-ratio", role + ".min_lr_ratio", "final learning rate as a fraction of the peak")
      .key("--grad-clip", role + ".grad_clip", "global gradient norm clip")
      .key("--weight-decay", role + ".weight_decay", "decoupled weight decay")
      .key("--seed", role + ".seed", "initialization and shuffling seed");
}

int write_sbm(const std::vector<fsg::NodeId>& sizes, double p_in, double p_out, std::uint64_t seed,
              const fs::path& out, const std::optional<fs::path>& labels_out) {
  const fsg::Graph g = fsg::stochastic_block_model(sizes, p_in, p_out, seed);
  fsg::save_edge_list(g, out);
  if (labels_out) {
    std::string text;
    const auto& labels = *g.community_labels();
    for (std::size_t v = 0; v < labels.size(); ++v) {
      text += std::to_string(v) + ' ' + std::to_string(labels[v]) + '\n';
    }
    fsg::io::write_file_atomic(*labels_out, text);
  }
  std::cout << "wrote " << g.num_nodes() << " nodes, " << g.num_edges() << " edges to " << out.string()
            << "\n";
  return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random-walk graph generation with a fast and a slow next-node model"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  // sbm: planted-partition test graph.
  auto* sbm = app.add_subcommand("sbm", "write a stochastic block model edge list");
  std::size_t sbm_blocks = 4;
  fsg::NodeId sbm_block_size = 75;
  double sbm_p_in = 0.1;
  double sbm_p_out = 0.005;
  std::uint64_t sbm_seed = 1;
  std::string sbm_out;
  std::optional<std::string> sbm_labels;
  sbm->add_option("--blocks", sbm_blocks, "number of communities")->capture_default_str();
  sbm->add_option("--block-size", sbm_block_size, "nodes per community")->capture_default_str();
  sbm->add_option("--p-in", sbm_p_in, "edge probability inside a community")->capture_default_str();
  sbm->add_option("--p-out", sbm_p_out, "edge probability across communities")->capture_default_str();
  sbm->add_option("--seed", sbm_seed, "graph seed")->capture_default_str();
  sbm->add_option("--out", sbm_out, "edge list to write")->required();
  sbm->add_option("--labels-out", sbm_labels, "community label file to write");

  Subcommand split(app, "split", "keep the largest component and hold out test edges");
  split.key("--graph", "graph", "input edge list")
      .key("--labels", "labels", "optional 'node community' file")
      .key("--fraction", "split.fraction", "fraction of edges held out")
      .key("--seed", "split.seed", "split seed");
  split.app()->get_option("--graph")->required();

  Subcommand sample(app, "sample-walks", "sample second-order random walks from the training graph");
  sample.key("--m", "sampler.m", "number of walks")
      .key("--k", "sampler.k", "walk length")
      .key("--p", "sampler.p", "return parameter")
      .key("--q", "sampler.q", "in-out parameter")
      .key("--seed", "sampler.seed", "sampler seed");

  Subcommand train_fast(app, "train", "train one next-node model on the walk corpus");
  std::string train_role = "fast";
  train_fast.app()
      ->add_option("--model", train_role, "which model to train")
      ->check(CLI::IsMember({"fast", "slow"}))
      ->capture_default_str();
  // Flags are declared against the fast section and redirected for --model slow.
  add_model_keys(train_fast, "fast");

  Subcommand filter(app, "build-filter", "insert every training window into a scalable bloom filter");
  filter.key("--fp-rate", "filter.fp_rate", "compound false-positive target")
      .key("--window", "filter.window", "nodes per window")
      .key("--initial-capacity", "filter.initial_capacity", "first stage capacity, 0 for the insert count")
      .key("--growth-factor", "filter.growth_factor", "capacity multiplier per stage")
      .key("--tightening-ratio", "filter.tightening_ratio", "false-positive multiplier per stage");

  Subcommand curves(app, "curves", "measure exploration and entropy curves of both models");
  curves.key("--n-walks", "switch.n_walks", "walks per model")
      .key("--len", "switch.len", "walk length")
      .key("--seed", "switch.seed", "generation seed");

  Subcommand knee(app, "knee", "pick the handover step");
  knee.key("--sensitivity", "switch.sensitivity", "knee sensitivity")
      .key("--fixed", "switch.fixed_j", "use this step instead of the knee")
      .key("--len", "generation.len", "generated walk length the step must fall inside");

  Subcommand generate(app, "generate", "generate walks with fast, slow and cascaded decoding");
  generate.key("--mode", "generation.mode", "all, fast, slow or cascade")
      .key("--n-walks", "generation.n_walks", "walks per mode")
      .key("--len", "generation.len", "walk length")
      .key("--temperature", "generation.temperature", "sampling temperature, 0 for greedy")
      .key("--seed", "generation.seed", "generation seed");

  Subcommand assemble(app, "assemble", "turn generated walks into graphs");
  assemble.key("--mode", "assembly.mode", "assembly mode")
      .key("--target-edges", "assembly.target_edges", "edges to keep, 0 for the training graph's count")
      .key("--seed", "assembly.seed", "assembly seed")
      .key("--from", "generation.mode", "which generated walks to assemble");

  Subcommand eval(app, "eval", "link prediction and structural metrics");
  eval.key("--from", "generation.mode", "which generated walks to evaluate");

  auto* pipeline = app.add_subcommand("pipeline", "run every stage, skipping those already up to date");
  std::optional<std::string> config_file;
  std::vector<std::string> overrides;
  std::optional<std::string> pipeline_dir;
  std::optional<unsigned> pipeline_workers;
  pipeline->add_option("--config", config_file, "flat key = value config file");
  pipeline->add_option("--set", overrides, "key=value override (repeatable)");
  pipeline->add_option("--dir", pipeline_dir, "run directory (same as out_dir)");
  pipeline->add_option("--workers", pipeline_workers, "worker threads");
  bool list_keys = false;
  pipeline->add_flag("--list-keys", list_keys, "print every config key with its default and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_config;
  }

  fsg::RunConfig cfg;
  try {
    if (sbm->parsed()) {
      std::vector<fsg::NodeId> sizes(sbm_blocks, sbm_block_size);
      return write_sbm(sizes, sbm_p_in, sbm_p_out, sbm_seed, sbm_out,
                       sbm_labels ? std::optional<fs::path>(*sbm_labels) : std::nullopt);
    }
    if (pipeline->parsed()) {
      if (list_keys) {
        for (const auto& [k, v] : cfg.entries()) std::cout << k << " = " << v << "\n";
        return exit_ok;
      }
      if (pipeline_dir) overrides.push_back("out_dir=" + *pipeline_dir);
      if (pipeline_workers) overrides.push_back("workers=" + std::to_string(*pipeline_workers));
      cfg = fsg::load_run_config(config_file ? std::optional<fs::path>(*config_file) : std::nullopt,
                                 overrides);
      cfg.validate();
      const auto manifest = fsg::run_pipeline(cfg, std::cout);
      std::cout << "manifest: " << (cfg.out_dir / fsg::artifacts::manifest).string() << "\n";
      (void)manifest;
      return exit_ok;
    }

    struct Step {
      const Subcommand* sub;
      std::function<void()> run;
    };
    const std::vector<Step> steps = {
        {&split,
         [&] {
           fsg::stages::prepare(cfg, std::cout);
           fsg::stages::split(cfg, std::cout);
         }},
        {&sample, [&] { fsg::stages::sample_walks(cfg, std::cout); }},
        {&train_fast, [&] { fsg::stages::train(cfg, train_role, std::cout); }},
        {&filter, [&] { fsg::stages::build_filter(cfg, std::cout); }},
        {&curves, [&] { fsg::stages::curves(cfg, std::cout); }},
        {&knee, [&] { fsg::stages::knee(cfg, std::cout); }},
        {&generate, [&] { fsg::stages::generate(cfg, std::cout); }},
        {&assemble, [&] { fsg::stages::assemble(cfg, std::cout); }},
        {&eval, [&] { fsg::stages::eval(cfg, std::cout); }},
    };
    for (const auto& step : steps) {
      if (!step.sub->app()->parsed()) continue;
      step.sub->apply(cfg, "fast", train_role);
      if (step.sub == &split) {
        cfg.validate();
      } else {
        cfg.validate(fsg::RunConfig::Scope::stage);
      }
      try {
        step.run();
      } catch (const fsg::ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        std::cerr << "error: " << step.sub->app()->get_name() << ": " << e.what() << "\n";
        return exit_stage;
      }
      return exit_ok;
    }
  } catch (const fsg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_config;
  } catch (const fsg::StageError& e) {
    std::cerr << "error: stage " << e.what() << "\n";
    return exit_stage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_stage;
  }
  return exit_ok;
}
