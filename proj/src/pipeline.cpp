#include "fsg/pipeline.hpp"

#include <charconv>
#include <chrono>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

#include "fsg/blob_file.hpp"
#include "fsg/content_hash.hpp"
#include "fsg/graph.hpp"
#include "fsg/metrics.hpp"
#include "fsg/switching.hpp"
#include "fsg/walks.hpp"

namespace fs = std::filesystem;

namespace fsg {

namespace {

// ---------------------------------------------------------------- values

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::uint64_t parse_uint(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" +
                      std::string(v) + "'");
  }
  return out;
}

double parse_real(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(std::string(key) + ": expected a number, got '" + std::string(v) + "'");
  }
  return out;
}

std::optional<std::uint64_t> parse_optional_uint(std::string_view key, std::string_view v) {
  if (v.empty() || v == "none") return std::nullopt;
  return parse_uint(key, v);
}

std::string fmt_real(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field uint_field(std::string key, T RunConfig::*member) {
  return {key,
          [key, member](RunConfig& c, std::string_view v) {
            c.*member = static_cast<T>(parse_uint(key, v));
          },
          [member](const RunConfig& c) { return std::to_string(c.*member); }};
}

Field real_field(std::string key, double RunConfig::*member) {
  return {key, [key, member](RunConfig& c, std::string_view v) { c.*member = parse_real(key, v); },
          [member](const RunConfig& c) { return fmt_real(c.*member); }};
}

Field seed_field(std::string key, std::optional<std::uint64_t> RunConfig::*member) {
  return {key,
          [key, member](RunConfig& c, std::string_view v) { c.*member = parse_optional_uint(key, v); },
          [member](const RunConfig& c) { return std::to_string(c.resolved(c.*member)); }};
}

void add_model_fields(std::vector<Field>& f, const std::string& name, ModelSection RunConfig::*sec) {
  auto model_uint = [&](const std::string& k, std::size_t ModelConfig::*m) {
    const std::string key = name + "." + k;
    f.push_back({key,
                 [key, sec, m](RunConfig& c, std::string_view v) {
                   (c.*sec).model.*m = parse_uint(key, v);
                 },
                 [sec, m](const RunConfig& c) { return std::to_string((c.*sec).model.*m); }});
  };
  auto hyper_uint = [&](const std::string& k, std::size_t TrainHyper::*m) {
    const std::string key = name + "." + k;
    f.push_back({key,
                 [key, sec, m](RunConfig& c, std::string_view v) {
                   (c.*sec).hyper.*m = parse_uint(key, v);
                 },
                 [sec, m](const RunConfig& c) { return std::to_string((c.*sec).hyper.*m); }});
  };
  auto hyper_real = [&](const std::string& k, double TrainHyper::*m) {
    const std::string key = name + "." + k;
    f.push_back({key,
                 [key, sec, m](RunConfig& c, std::string_view v) {
                   (c.*sec).hyper.*m = parse_real(key, v);
                 },
                 [sec, m](const RunConfig& c) { return fmt_real((c.*sec).hyper.*m); }});
  };
  model_uint("depth", &ModelConfig::depth);
  model_uint("width", &ModelConfig::width);
  model_uint("heads", &ModelConfig::heads);
  model_uint("context_len", &ModelConfig::context_len);
  {
    const std::string key = name + ".dropout";
    f.push_back({key,
                 [key, sec](RunConfig& c, std::string_view v) {
                   (c.*sec).model.dropout = parse_real(key, v);
                 },
                 [sec](const RunConfig& c) { return fmt_real((c.*sec).model.dropout); }});
  }
  hyper_real("lr", &TrainHyper::lr);
  hyper_uint("batch", &TrainHyper::batch);
  hyper_uint("epochs", &TrainHyper::epochs);
  hyper_uint("warmup_steps", &TrainHyper::warmup_steps);
  hyper_real("min_lr_ratio", &TrainHyper::min_lr_ratio);
  hyper_real("grad_clip", &TrainHyper::grad_clip);
  hyper_real("beta1", &TrainHyper::beta1);
  hyper_real("beta2", &TrainHyper::beta2);
  hyper_real("weight_decay", &TrainHyper::weight_decay);
  {
    const std::string key = name + ".seed";
    f.push_back({key,
                 [key, sec](RunConfig& c, std::string_view v) {
                   (c.*sec).seed = parse_optional_uint(key, v);
                 },
                 [sec](const RunConfig& c) { return std::to_string(c.resolved((c.*sec).seed)); }});
  }
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"graph", [](RunConfig& c, std::string_view v) { c.graph = std::string(v); },
                 [](const RunConfig& c) { return c.graph.string(); }});
    f.push_back({"labels", [](RunConfig& c, std::string_view v) { c.labels = std::string(v); },
                 [](const RunConfig& c) { return c.labels.string(); }});
    f.push_back({"out_dir", [](RunConfig& c, std::string_view v) { c.out_dir = std::string(v); },
                 [](const RunConfig& c) { return c.out_dir.string(); }});
    f.push_back(uint_field("workers", &RunConfig::workers));
    f.push_back(uint_field("seed", &RunConfig::seed));
    f.push_back(real_field("split.fraction", &RunConfig::split_fraction));
    f.push_back(seed_field("split.seed", &RunConfig::split_seed));
    f.push_back(uint_field("sampler.m", &RunConfig::walks_m));
    f.push_back(uint_field("sampler.k", &RunConfig::walks_k));
    f.push_back(real_field("sampler.p", &RunConfig::p_param));
    f.push_back(real_field("sampler.q", &RunConfig::q_param));
    f.push_back(seed_field("sampler.seed", &RunConfig::walks_seed));
    add_model_fields(f, "fast", &RunConfig::fast);
    add_model_fields(f, "slow", &RunConfig::slow);
    f.push_back({"filter.fp_rate",
                 [](RunConfig& c, std::string_view v) { c.filter.fp_rate = parse_real("filter.fp_rate", v); },
                 [](const RunConfig& c) { return fmt_real(c.filter.fp_rate); }});
    f.push_back(uint_field("filter.window", &RunConfig::filter_window));
    f.push_back({"filter.initial_capacity",
                 [](RunConfig& c, std::string_view v) {
                   c.filter.initial_capacity = parse_uint("filter.initial_capacity", v);
                 },
                 [](const RunConfig& c) { return std::to_string(c.filter.initial_capacity); }});
    f.push_back({"filter.growth_factor",
                 [](RunConfig& c, std::string_view v) {
                   const auto g = parse_uint("filter.growth_factor", v);
                   if (g > 1'000'000) throw ConfigError("filter.growth_factor: too large");
                   c.filter.growth_factor = static_cast<std::uint32_t>(g);
                 },
                 [](const RunConfig& c) { return std::to_string(c.filter.growth_factor); }});
    f.push_back({"filter.tightening_ratio",
                 [](RunConfig& c, std::string_view v) {
                   c.filter.tightening_ratio = parse_real("filter.tightening_ratio", v);
                 },
                 [](const RunConfig& c) { return fmt_real(c.filter.tightening_ratio); }});
    f.push_back(uint_field("switch.n_walks", &RunConfig::switch_n_walks));
    f.push_back(uint_field("switch.len", &RunConfig::switch_len));
    f.push_back(real_field("switch.sensitivity", &RunConfig::sensitivity));
    f.push_back({"switch.fixed_j",
                 [](RunConfig& c, std::string_view v) {
                   const auto j = parse_optional_uint("switch.fixed_j", v);
                   c.fixed_j = j ? std::optional<std::size_t>(*j) : std::nullopt;
                 },
                 [](const RunConfig& c) {
                   return c.fixed_j ? std::to_string(*c.fixed_j) : std::string("none");
                 }});
    f.push_back(seed_field("switch.seed", &RunConfig::switch_seed));
    f.push_back(uint_field("generation.n_walks", &RunConfig::gen_n_walks));
    f.push_back(uint_field("generation.len", &RunConfig::gen_len));
    f.push_back(real_field("generation.temperature", &RunConfig::temperature));
    f.push_back({"generation.mode",
                 [](RunConfig& c, std::string_view v) { c.gen_mode = std::string(v); },
                 [](const RunConfig& c) { return c.gen_mode; }});
    f.push_back(seed_field("generation.seed", &RunConfig::gen_seed));
    f.push_back({"assembly.mode",
                 [](RunConfig& c, std::string_view v) {
                   try {
                     c.assembly_mode = parse_assembly_mode(std::string(v));
                   } catch (const std::exception& e) {
                     throw ConfigError(std::string("assembly.mode: ") + e.what());
                   }
                 },
                 [](const RunConfig& c) { return to_string(c.assembly_mode); }});
    f.push_back(uint_field("assembly.target_edges", &RunConfig::target_edges));
    f.push_back(seed_field("assembly.seed", &RunConfig::assembly_seed));
    return f;
  }();
  return table;
}

}  // namespace

RunConfig::RunConfig() {
  fast.model.depth = 1;
  slow.model.depth = 6;
  filter.initial_capacity = 0;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  const std::string v = trim(value);
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(*this, v);
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(*this));
  return out;
}

void RunConfig::validate(Scope scope) const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  const bool whole = scope == Scope::pipeline;
  if (whole && graph.empty()) fail("graph: no input edge list given");
  if (whole && !fs::exists(graph)) fail("graph: file not found: " + graph.string());
  if (!labels.empty() && !fs::exists(labels)) fail("labels: file not found: " + labels.string());
  if (out_dir.empty()) fail("out_dir: must not be empty");
  if (workers < 1) fail("workers: must be >= 1");
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) fail("split.fraction: must lie in (0, 1)");
  if (walks_m < 1) fail("sampler.m: must be >= 1");
  if (walks_k < 2) fail("sampler.k: must be >= 2");
  try {
    SamplerParams{p_param, q_param}.validate();
  } catch (const std::exception& e) {
    fail(std::string("sampler: ") + e.what());
  }
  const std::pair<const char*, const ModelSection*> sections[] = {{"fast", &fast}, {"slow", &slow}};
  for (const auto& [name, sec] : sections) {
    ModelConfig probe = sec->model;
    probe.num_nodes = 1;
    try {
      probe.validate();
      sec->hyper.validate();
    } catch (const std::exception& e) {
      fail(std::string(name) + ": " + e.what());
    }
    const std::size_t need = whole ? std::max({walks_k, gen_len, switch_len}) - 1 : 1;
    if (probe.context_len < need) {
      fail(std::string(name) + ".context_len: " + std::to_string(probe.context_len) +
           " is shorter than the longest conditioning prefix (" + std::to_string(need) + ")");
    }
  }
  try {
    BloomParams probe = filter;
    if (probe.initial_capacity == 0) probe.initial_capacity = 1;  // 0 means "size to the corpus"
    probe.validate();
  } catch (const std::exception& e) {
    fail(std::string("filter: ") + e.what());
  }
  if (filter_window < 1 || (whole && filter_window > walks_k)) {
    fail("filter.window: must lie in [1, sampler.k]");
  }
  if (switch_n_walks < 1) fail("switch.n_walks: must be >= 1");
  if (!(sensitivity >= 0.0)) fail("switch.sensitivity: must be >= 0");
  if (whole && switch_len < filter_window + 2) fail("switch.len: must be at least filter.window + 2");
  if (fixed_j && (*fixed_j == 0 || *fixed_j >= gen_len)) {
    fail("switch.fixed_j: must lie in (0, generation.len)");
  }
  if (gen_n_walks < 1) fail("generation.n_walks: must be >= 1");
  if (gen_len < 2) fail("generation.len: must be >= 2");
  if (!(temperature >= 0.0)) fail("generation.temperature: must be >= 0");
  if (gen_mode != "all" && gen_mode != "fast" && gen_mode != "slow" && gen_mode != "cascade") {
    fail("generation.mode: expected all, fast, slow or cascade");
  }
}

void apply_config_text(RunConfig& cfg, std::string_view text, const std::string& source) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected key = value");
    }
    try {
      cfg.set(trim(std::string_view(t).substr(0, eq)), std::string_view(t).substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

RunConfig load_run_config(const std::optional<fs::path>& file,
                          const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (file) {
    if (!fs::exists(*file)) throw ConfigError("config file not found: " + file->string());
    apply_config_text(cfg, io::read_file(*file), file->string());
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "' is not key=value");
    cfg.set(trim(std::string_view(o).substr(0, eq)), std::string_view(o).substr(eq + 1));
  }
  return cfg;
}

// ---------------------------------------------------------------- stages

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt_secs(double s) { return fmt_real(std::round(s * 100) / 100); }

fs::path at(const RunConfig& cfg, const std::string& rel) { return cfg.out_dir / rel; }

void require(const RunConfig& cfg, const std::string& rel, const char* producer) {
  if (!fs::exists(at(cfg, rel))) {
    throw std::runtime_error("missing " + at(cfg, rel).string() + "; run `fsgraph " + producer +
                             "` first");
  }
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(io::read_file(p)); }

void write_json(const fs::path& p, const nlohmann::ordered_json& j) {
  io::write_file_atomic(p, j.dump(2) + "\n");
}

std::string split_file(const char* name) { return std::string(artifacts::split_dir) + "/" + name; }

std::vector<std::string> split_files() {
  return {split_file("train.edges"), split_file("heldout.edges"), split_file("negative.edges"),
          split_file("split.json")};
}

nlohmann::ordered_json curve_json(const CurveMeasurement& m) {
  return {{"tag", m.exploration.tag},
          {"n_walks", m.exploration.n_walks},
          {"window", m.exploration.window},
          {"ex", m.exploration.ex},
          {"entropy", m.entropy}};
}

ExplorationCurve curve_from_json(const nlohmann::json& j) {
  ExplorationCurve c;
  c.tag = j.at("tag").get<std::string>();
  c.n_walks = j.at("n_walks").get<std::size_t>();
  c.window = j.at("window").get<std::size_t>();
  c.ex = j.at("ex").get<std::vector<double>>();
  return c;
}

std::vector<std::uint32_t> read_dense_labels(const fs::path& path, NodeId n) {
  std::vector<std::uint32_t> labels(n, 0);
  std::istringstream in(io::read_file(path));
  std::uint64_t node = 0;
  std::uint64_t label = 0;
  std::size_t seen = 0;
  while (in >> node >> label) {
    if (node >= n) throw std::runtime_error("label file names node outside the graph");
    labels[node] = static_cast<std::uint32_t>(label);
    ++seen;
  }
  if (seen != n) throw std::runtime_error("label file does not cover every node");
  return labels;
}

NodeId graph_nodes(const RunConfig& cfg) {
  require(cfg, artifacts::graph_info, "split");
  return read_json(at(cfg, artifacts::graph_info)).at("nodes").get<NodeId>();
}

bool has_labels(const RunConfig& cfg) { return fs::exists(at(cfg, artifacts::labels)); }

}  // namespace

std::vector<std::string> generation_modes(const RunConfig& cfg) {
  if (cfg.gen_mode == "all") return {"fast", "slow", "cascade"};
  return {cfg.gen_mode};
}

std::string artifacts::generated_walks(const std::string& mode) { return "gen_" + mode + ".walks"; }
std::string artifacts::assembled(const std::string& mode) { return "assembled_" + mode + ".edges"; }
std::string artifacts::eval_report(const std::string& mode) { return "eval_" + mode + ".json"; }

namespace stages {

nlohmann::ordered_json prepare(const RunConfig& cfg, std::ostream&) {
  const LoadedGraph loaded = load_edge_list(cfg.graph);
  const Subgraph core = lcc_with_map(loaded.graph);
  fs::create_directories(cfg.out_dir);
  save_edge_list(core.graph, at(cfg, artifacts::lcc_edges));
  std::vector<std::int64_t> ids;
  ids.reserve(core.kept.size());
  for (NodeId v : core.kept) ids.push_back(loaded.original_ids[v]);
  save_id_map(ids, at(cfg, artifacts::id_map));
  if (!cfg.labels.empty()) {
    const auto labels = load_community_labels(cfg.labels, ids);
    std::string text;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      text += std::to_string(i) + ' ' + std::to_string(labels[i]) + '\n';
    }
    io::write_file_atomic(at(cfg, artifacts::labels), text);
  } else {
    fs::remove(at(cfg, artifacts::labels));
  }
  nlohmann::ordered_json info = {{"raw_nodes", loaded.graph.num_nodes()},
                                 {"raw_edges", loaded.graph.num_edges()},
                                 {"dropped_self_loops", loaded.dropped_self_loops},
                                 {"dropped_duplicates", loaded.dropped_duplicates},
                                 {"nodes", core.graph.num_nodes()},
                                 {"edges", core.graph.num_edges()}};
  write_json(at(cfg, artifacts::graph_info), info);
  return info;
}

nlohmann::ordered_json split(const RunConfig& cfg, std::ostream&) {
  const NodeId n = graph_nodes(cfg);
  require(cfg, artifacts::lcc_edges, "split");
  const Graph g = Graph::from_edges(n, load_edges(at(cfg, artifacts::lcc_edges)));
  const EdgeSplit s = split_edges(g, cfg.split_fraction, cfg.resolved(cfg.split_seed));
  save_split(s, at(cfg, artifacts::split_dir));
  return {{"train_edges", s.train_graph.num_edges()},
          {"heldout_edges", s.heldout_edges.size()},
          {"negative_edges", s.negative_edges.size()}};
}

nlohmann::ordered_json sample_walks(const RunConfig& cfg, std::ostream&) {
  require(cfg, split_file("split.json"), "split");
  const EdgeSplit s = load_split(at(cfg, artifacts::split_dir));
  const WalkMatrix walks = build_corpus(s.train_graph, cfg.walks_m, cfg.walks_k,
                                        SamplerParams{cfg.p_param, cfg.q_param},
                                        cfg.resolved(cfg.walks_seed), cfg.workers);
  save_walks(walks, at(cfg, artifacts::walks));
  return {{"walks", walks.num_walks()}, {"length", walks.walk_length()}};
}

nlohmann::ordered_json train(const RunConfig& cfg, const std::string& role, std::ostream& log) {
  if (role != "fast" && role != "slow") throw ConfigError("model role must be fast or slow");
  require(cfg, artifacts::walks, "sample-walks");
  const ModelSection& sec = role == "fast" ? cfg.fast : cfg.slow;
  const WalkMatrix walks = load_walks(at(cfg, artifacts::walks));
  ModelConfig mc = sec.model;
  mc.num_nodes = walks.num_nodes();
  TrainHyper hyper = sec.hyper;
  hyper.seed = cfg.resolved(sec.seed);
  auto result = train_transformer(walks, mc, hyper, [&](const TrainProgress& p) {
    log << "  " << role << " epoch " << p.epoch << "/" << hyper.epochs << " cross-entropy "
        << fmt_real(p.epoch_cross_entropy) << " (" << fmt_secs(p.seconds) << " s)\n";
  });
  nlohmann::ordered_json report = to_json(result.report);
  result.model->save(at(cfg, role == "fast" ? artifacts::fast_model : artifacts::slow_model),
                     {{"train_report", report}, {"hyper", to_json(hyper)}});
  return report;
}

nlohmann::ordered_json build_filter(const RunConfig& cfg, std::ostream&) {
  require(cfg, artifacts::walks, "sample-walks");
  const WalkMatrix walks = load_walks(at(cfg, artifacts::walks));
  const NeighborhoodFilter filter = build_neighborhood_filter(walks, cfg.filter_window, cfg.filter);
  filter.save(at(cfg, artifacts::filter));
  return {{"inserted", filter.filter().total_inserted()},
          {"stages", filter.filter().stages().size()},
          {"bytes", filter.serialized_size()},
          {"compound_fp_bound", filter.filter().compound_fp_bound()}};
}

nlohmann::ordered_json curves(const RunConfig& cfg, std::ostream&) {
  require(cfg, artifacts::fast_model, "train --model fast");
  require(cfg, artifacts::slow_model, "train --model slow");
  require(cfg, artifacts::filter, "build-filter");
  const auto fast = TransformerModel::load(at(cfg, artifacts::fast_model));
  const auto slow = TransformerModel::load(at(cfg, artifacts::slow_model));
  const auto filter = NeighborhoodFilter::load(at(cfg, artifacts::filter));
  const auto seed = cfg.resolved(cfg.switch_seed);
  const auto f = measure_curves(*fast, filter, cfg.switch_n_walks, cfg.switch_len, seed, "fast", cfg.workers);
  const auto s = measure_curves(*slow, filter, cfg.switch_n_walks, cfg.switch_len, seed, "slow", cfg.workers);
  save_curves_csv(at(cfg, artifacts::curves_csv), f, s);
  write_json(at(cfg, artifacts::curves_json), {{"fast", curve_json(f)}, {"slow", curve_json(s)}});
  return nlohmann::ordered_json::object();
}

nlohmann::ordered_json knee(const RunConfig& cfg, std::ostream& log) {
  HandoverPoint h;
  if (cfg.fixed_j) {
    h = fixed_handover(*cfg.fixed_j, cfg.gen_len);
  } else {
    require(cfg, artifacts::curves_json, "curves");
    const auto j = read_json(at(cfg, artifacts::curves_json));
    h = handover_point(curve_from_json(j.at("fast")), curve_from_json(j.at("slow")), cfg.sensitivity);
    if (h.j >= cfg.gen_len) {
      throw std::runtime_error("knee at step " + std::to_string(h.j) +
                               " is not before generation.len " + std::to_string(cfg.gen_len));
    }
  }
  log << "  handover j = " << h.j << "\n";
  const auto out = to_json(h);
  write_json(at(cfg, artifacts::handover), out);
  return out;
}

nlohmann::ordered_json generate(const RunConfig& cfg, std::ostream& log) {
  const auto modes = generation_modes(cfg);
  const bool need_fast = cfg.gen_mode != "slow";
  const bool need_slow = cfg.gen_mode != "fast";
  const bool need_switch = cfg.gen_mode == "all" || cfg.gen_mode == "cascade";
  std::unique_ptr<TransformerModel> fast;
  std::unique_ptr<TransformerModel> slow;
  if (need_fast) {
    require(cfg, artifacts::fast_model, "train --model fast");
    fast = TransformerModel::load(at(cfg, artifacts::fast_model));
  }
  if (need_slow) {
    require(cfg, artifacts::slow_model, "train --model slow");
    slow = TransformerModel::load(at(cfg, artifacts::slow_model));
  }
  std::size_t j = 0;
  if (need_switch) {
    require(cfg, artifacts::handover, "knee");
    j = handover_from_json(read_json(at(cfg, artifacts::handover))).j;
  }
  const auto seed = cfg.resolved(cfg.gen_seed);
  nlohmann::ordered_json info = nlohmann::ordered_json::object();
  for (const auto& mode : modes) {
    if (fast) fast->counters().reset();
    if (slow) slow->counters().reset();
    // Timed region covers generation only; loading and writing stay outside.
    const auto t0 = std::chrono::steady_clock::now();
    WalkMatrix walks;
    if (mode == "fast") {
      walks = generate_walks(*fast, cfg.gen_n_walks, cfg.gen_len, cfg.temperature, seed, cfg.workers);
    } else if (mode == "slow") {
      walks = generate_walks(*slow, cfg.gen_n_walks, cfg.gen_len, cfg.temperature, seed, cfg.workers);
    } else {
      walks = generate_fast_slow(*fast, *slow, j, cfg.gen_n_walks, cfg.gen_len, cfg.temperature, seed,
                                 cfg.workers);
    }
    const double secs = seconds_since(t0);
    save_walks(walks, at(cfg, artifacts::generated_walks(mode)));
    nlohmann::ordered_json entry = {{"seconds", secs},
                                    {"n_walks", walks.num_walks()},
                                    {"len", walks.walk_length()}};
    if (mode == "cascade") {
      entry["j"] = j;
      entry["slow_prefix_passes"] = slow->counters().prefix_passes.load();
      entry["slow_single_passes"] = slow->counters().single_passes.load();
    }
    info[mode] = entry;
    log << "  generated " << mode << " walks in " << fmt_secs(secs) << " s\n";
  }
  write_json(at(cfg, artifacts::generation), info);
  return info;
}

nlohmann::ordered_json assemble(const RunConfig& cfg, std::ostream& log) {
  require(cfg, split_file("split.json"), "split");
  const EdgeSplit s = load_split(at(cfg, artifacts::split_dir));
  const std::size_t target = cfg.target_edges ? cfg.target_edges : s.train_graph.num_edges();
  nlohmann::ordered_json info = nlohmann::ordered_json::object();
  for (const auto& mode : generation_modes(cfg)) {
    require(cfg, artifacts::generated_walks(mode), "generate");
    const WalkMatrix walks = load_walks(at(cfg, artifacts::generated_walks(mode)));
    const CountMatrix counts = count_matrix(walks, cfg.workers);
    std::size_t wanted = target;
    if (cfg.assembly_mode == AssemblyMode::top_e && counts.pairs().size() < target) {
      log << "  " << mode << ": only " << counts.pairs().size() << " distinct pairs observed, target "
          << target << "\n";
      wanted = counts.pairs().size();
    }
    const Graph g = assemble_graph(counts, cfg.assembly_mode, wanted, cfg.resolved(cfg.assembly_seed));
    save_edge_list(g, at(cfg, artifacts::assembled(mode)));
    info[mode] = {{"edges", g.num_edges()}, {"observed_pairs", counts.pairs().size()}};
  }
  return info;
}

nlohmann::ordered_json eval(const RunConfig& cfg, std::ostream& log) {
  require(cfg, split_file("split.json"), "split");
  require(cfg, artifacts::generation, "generate");
  const NodeId n = graph_nodes(cfg);
  const EdgeSplit s = load_split(at(cfg, artifacts::split_dir));
  const auto gen_info = read_json(at(cfg, artifacts::generation));
  std::optional<std::vector<std::uint32_t>> labels;
  if (has_labels(cfg)) labels = read_dense_labels(at(cfg, artifacts::labels), n);
  std::string csv = eval_csv_header() + "\n";
  nlohmann::ordered_json all = nlohmann::ordered_json::array();
  for (const auto& mode : generation_modes(cfg)) {
    require(cfg, artifacts::generated_walks(mode), "generate");
    require(cfg, artifacts::assembled(mode), "assemble");
    if (!gen_info.contains(mode)) throw std::runtime_error("generation.json has no " + mode + " entry");
    const WalkMatrix walks = load_walks(at(cfg, artifacts::generated_walks(mode)));
    const EdgeScores scores = edge_scores(count_matrix(walks, cfg.workers));
    const LinkPrediction lp = link_prediction_eval(scores, s.heldout_edges, s.negative_edges);
    const Graph g = Graph::from_edges(n, load_edges(at(cfg, artifacts::assembled(mode))));
    EvalReport report;
    report.label = mode;
    report.auc = lp.auc;
    report.average_precision = lp.average_precision;
    report.wall_clock_generation_seconds = gen_info.at(mode).at("seconds").get<double>();
    std::optional<std::span<const std::uint32_t>> label_span;
    if (labels) label_span = std::span<const std::uint32_t>(*labels);
    report.structural = structural_report(g, label_span, cfg.workers);
    const auto j = to_json(report);
    write_json(at(cfg, artifacts::eval_report(mode)), j);
    csv += eval_csv_row(report) + "\n";
    all.push_back(j);
    log << "  " << mode << ": AUC " << fmt_real(lp.auc) << " AP " << fmt_real(lp.average_precision)
        << " time " << fmt_secs(report.wall_clock_generation_seconds) << " s\n";
  }
  io::write_file_atomic(at(cfg, artifacts::eval_csv), csv);
  return all;
}

}  // namespace stages

// ---------------------------------------------------------------- runner

namespace {

class Runner {
 public:
  Runner(const RunConfig& cfg, std::ostream& log) : cfg_(cfg), log_(log) {}

  nlohmann::ordered_json& manifest() { return manifest_; }
  const std::map<std::string, std::string>& hashes() const { return hashes_; }

  std::string hash_of(const std::string& rel) {
    auto it = hashes_.find(rel);
    if (it != hashes_.end()) return it->second;
    return hashes_[rel] = git_blob_hash_file(at(cfg_, rel));
  }

  /// Runs `body` unless a stamp shows that the same config keys, inputs and
  /// external material produced the outputs still on disk.
  nlohmann::json stage(const std::string& name, const std::vector<std::string>& config_prefixes,
                       const std::vector<std::string>& inputs, const std::vector<std::string>& outputs,
                       const std::function<nlohmann::ordered_json()>& body,
                       const nlohmann::ordered_json& external = nlohmann::ordered_json::object()) {
    try {
      nlohmann::ordered_json material;
      material["stage"] = name;
      material["external"] = external;
      auto& conf = material["config"] = nlohmann::ordered_json::object();
      for (const auto& [k, v] : cfg_.entries()) {
        for (const auto& prefix : config_prefixes) {
          if (k == prefix || k.starts_with(prefix + ".")) conf[k] = v;
        }
      }
      auto& in = material["inputs"] = nlohmann::ordered_json::object();
      for (const auto& rel : inputs) in[rel] = hash_of(rel);
      const std::string key = git_blob_hash(material.dump());

      const fs::path stamp_path = at(cfg_, ".stamps/" + name + ".json");
      if (auto stamped = reuse(stamp_path, key, outputs)) {
        log_ << "[" << name << "] up to date, skipped\n";
        record(name, stamped->at("seconds").get<double>());
        return stamped->at("info");
      }
      log_ << "[" << name << "] running\n";
      const auto t0 = std::chrono::steady_clock::now();
      nlohmann::ordered_json info = body();
      const double secs = seconds_since(t0);
      nlohmann::ordered_json stamp;
      stamp["key"] = key;
      auto& outs = stamp["outputs"] = nlohmann::ordered_json::object();
      for (const auto& rel : outputs) {
        hashes_.erase(rel);
        outs[rel] = hash_of(rel);
      }
      stamp["seconds"] = secs;
      stamp["info"] = info;
      write_json(stamp_path, stamp);
      log_ << "[" << name << "] done in " << fmt_secs(secs) << " s\n";
      record(name, secs);
      return info;
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, e.what());
    }
  }

 private:
  std::optional<nlohmann::json> reuse(const fs::path& stamp_path, const std::string& key,
                                      const std::vector<std::string>& outputs) {
    if (!fs::exists(stamp_path)) return std::nullopt;
    try {
      nlohmann::json stamp = read_json(stamp_path);
      if (stamp.at("key").get<std::string>() != key) return std::nullopt;
      const auto& outs = stamp.at("outputs");
      for (const auto& rel : outputs) {
        if (!outs.contains(rel) || !fs::exists(at(cfg_, rel))) return std::nullopt;
        if (hash_of(rel) != outs.at(rel).get<std::string>()) return std::nullopt;
      }
      return stamp;
    } catch (const nlohmann::json::exception&) {
      return std::nullopt;
    }
  }

  void record(const std::string& name, double secs) {
    manifest_["stages"].push_back({{"name", name}, {"seconds", secs}});
  }

  const RunConfig& cfg_;
  std::ostream& log_;
  std::map<std::string, std::string> hashes_;
  nlohmann::ordered_json manifest_;
};

}  // namespace

nlohmann::ordered_json run_pipeline(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  Runner run(cfg, log);
  auto& manifest = run.manifest();
  manifest["format_version"] = 1;
  manifest["status"] = "running";
  auto& config_echo = manifest["config"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : cfg.entries()) config_echo[k] = v;
  manifest["seeds"] = {{"split", cfg.resolved(cfg.split_seed)},
                       {"sampler", cfg.resolved(cfg.walks_seed)},
                       {"fast", cfg.resolved(cfg.fast.seed)},
                       {"slow", cfg.resolved(cfg.slow.seed)},
                       {"switch", cfg.resolved(cfg.switch_seed)},
                       {"generation", cfg.resolved(cfg.gen_seed)},
                       {"assembly", cfg.resolved(cfg.assembly_seed)}};
  manifest["stages"] = nlohmann::ordered_json::array();

  const auto modes = generation_modes(cfg);
  const bool need_fast = cfg.gen_mode != "slow";
  const bool need_slow = cfg.gen_mode != "fast";
  const bool need_switch = cfg.gen_mode == "all" || cfg.gen_mode == "cascade";
  auto bind = [&](auto fn) { return [&cfg, &log, fn] { return fn(cfg, log); }; };

  auto finish = [&](const char* status) {
    manifest["status"] = status;
    auto& arts = manifest["artifacts"] = nlohmann::ordered_json::object();
    for (const auto& [rel, hash] : run.hashes()) {
      if (fs::exists(at(cfg, rel))) arts[rel] = hash;
    }
    write_json(at(cfg, artifacts::manifest), manifest);
  };

  try {
    std::vector<std::string> prepared = {artifacts::lcc_edges, artifacts::id_map, artifacts::graph_info};
    if (!cfg.labels.empty()) prepared.push_back(artifacts::labels);
    // External inputs are keyed by content, so moving them keeps the stamp.
    nlohmann::ordered_json external = {
        {"graph", git_blob_hash_file(cfg.graph)},
        {"labels", cfg.labels.empty() ? std::string() : git_blob_hash_file(cfg.labels)}};
    run.stage("prepare", {}, {}, prepared, bind(stages::prepare), external);
    run.stage("split", {"split", "seed"}, {artifacts::lcc_edges, artifacts::graph_info}, split_files(),
              bind(stages::split));
    run.stage("sample-walks", {"sampler", "seed", "workers"}, split_files(), {artifacts::walks},
              bind(stages::sample_walks));

    nlohmann::ordered_json train_reports = nlohmann::ordered_json::object();
    for (const std::string role : {"fast", "slow"}) {
      if ((role == "fast" && !need_fast) || (role == "slow" && !need_slow)) continue;
      const char* file = role == "fast" ? artifacts::fast_model : artifacts::slow_model;
      train_reports[role] = run.stage("train-" + role, {role, "seed"}, {artifacts::walks}, {file},
                                      [&] { return stages::train(cfg, role, log); });
    }
    manifest["train"] = train_reports;

    if (need_switch) {
      run.stage("build-filter", {"filter"}, {artifacts::walks}, {artifacts::filter},
                bind(stages::build_filter));
      std::vector<std::string> knee_inputs;
      if (!cfg.fixed_j) {
        run.stage("curves", {"switch.n_walks", "switch.len", "switch.seed", "seed", "workers"},
                  {artifacts::fast_model, artifacts::slow_model, artifacts::filter},
                  {artifacts::curves_csv, artifacts::curves_json}, bind(stages::curves));
        knee_inputs.push_back(artifacts::curves_json);
      }
      manifest["handover"] =
          run.stage("knee", {"switch.sensitivity", "switch.fixed_j", "generation.len"}, knee_inputs,
                    {artifacts::handover}, bind(stages::knee));
    }

    std::vector<std::string> gen_inputs;
    if (need_fast) gen_inputs.push_back(artifacts::fast_model);
    if (need_slow) gen_inputs.push_back(artifacts::slow_model);
    if (need_switch) gen_inputs.push_back(artifacts::handover);
    std::vector<std::string> gen_outputs = {artifacts::generation};
    for (const auto& m : modes) gen_outputs.push_back(artifacts::generated_walks(m));
    manifest["generation"] = run.stage("generate", {"generation", "seed", "workers"}, gen_inputs,
                                       gen_outputs, bind(stages::generate));

    std::vector<std::string> asm_inputs = split_files();
    std::vector<std::string> asm_outputs;
    for (const auto& m : modes) {
      asm_inputs.push_back(artifacts::generated_walks(m));
      asm_outputs.push_back(artifacts::assembled(m));
    }
    run.stage("assemble", {"assembly", "seed"}, asm_inputs, asm_outputs, bind(stages::assemble));

    std::vector<std::string> eval_inputs = asm_inputs;
    eval_inputs.push_back(artifacts::generation);
    eval_inputs.push_back(artifacts::graph_info);
    for (const auto& m : modes) eval_inputs.push_back(artifacts::assembled(m));
    if (!cfg.labels.empty()) eval_inputs.push_back(artifacts::labels);
    std::vector<std::string> eval_outputs = {artifacts::eval_csv};
    for (const auto& m : modes) eval_outputs.push_back(artifacts::eval_report(m));
    manifest["eval"] = run.stage("eval", {}, eval_inputs, eval_outputs, bind(stages::eval));
  } catch (const StageError& e) {
    manifest["failed_stage"] = e.stage();
    manifest["error"] = e.what();
    finish("failed");
    throw;
  }
  finish("ok");
  return manifest;
}

}  // namespace fsg
