#include <cstdlib>
#include <sstream>
#include <string>

#include "doctest.h"
#include "fsg/blob_file.hpp"
#include "fsg/content_hash.hpp"
#include "fsg/graph.hpp"
#include "fsg/pipeline.hpp"
#include "test_support.hpp"

using namespace fsg;
namespace fs = std::filesystem;

namespace {

void write_tiny_graph(const fs::path& edges, const fs::path& labels) {
  const std::vector<NodeId> sizes = {20, 20, 20};
  const Graph g = stochastic_block_model(sizes, 0.35, 0.02, 3);
  save_edge_list(g, edges);
  std::string text;
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    text += std::to_string(v) + ' ' + std::to_string((*g.community_labels())[v]) + '\n';
  }
  io::write_file_atomic(labels, text);
}

const char* tiny_config = R"(# small enough for a unit test
sampler.m = 400
sampler.k = 8
fast.width = 16
fast.heads = 2
fast.context_len = 10
fast.batch = 32
slow.depth = 2
slow.width = 16
slow.heads = 2
slow.context_len = 10
slow.batch = 32
filter.window = 3
switch.n_walks = 200
switch.len = 10
generation.n_walks = 200
generation.len = 10
)";

RunConfig tiny_run(const testing::TempDir& dir, std::vector<std::string> extra = {}) {
  write_tiny_graph(dir / "g.edges", dir / "g.labels");
  io::write_file_atomic(dir / "run.conf", tiny_config);
  extra.push_back("graph=" + (dir / "g.edges").string());
  extra.push_back("labels=" + (dir / "g.labels").string());
  extra.push_back("out_dir=" + (dir / "run").string());
  return load_run_config(dir / "run.conf", extra);
}

int run_cli(const std::string& args, const fs::path& err) {
  const std::string cmd = std::string(FSG_CLI_PATH) + " " + args + " > /dev/null 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config keys, precedence and errors") {
  RunConfig cfg;
  CHECK_THROWS_AS(cfg.set("no.such.key", "1"), ConfigError);
  CHECK_THROWS_AS(cfg.set("sampler.m", "many"), ConfigError);
  CHECK_THROWS_AS(cfg.set("split.fraction", "0.2x"), ConfigError);
  cfg.set("switch.fixed_j", "none");
  CHECK_FALSE(cfg.fixed_j.has_value());

  testing::TempDir dir("config");
  io::write_file_atomic(dir / "a.conf", "sampler.m = 123\n# comment\n\nsampler.k=9\n");
  const RunConfig from_file = load_run_config(dir / "a.conf", {"sampler.k=11"});
  CHECK(from_file.walks_m == 123);
  CHECK(from_file.walks_k == 11);
  CHECK(from_file.walks_seed.value_or(0) == 0);
  CHECK(from_file.resolved(from_file.walks_seed) == from_file.seed);

  io::write_file_atomic(dir / "bad.conf", "sampler.m = 1\nsampler.k = 8\nbogus = 3\n");
  try {
    (void)load_run_config(dir / "bad.conf", {});
    FAIL("unknown key accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("bad.conf:3") != std::string::npos);
  }
  CHECK_THROWS_AS((void)load_run_config(std::nullopt, {"sampler.m"}), ConfigError);

  // every key round-trips through its printed value
  const RunConfig defaults;
  RunConfig copy;
  for (const auto& [k, v] : defaults.entries()) copy.set(k, v);
  CHECK(copy.entries() == defaults.entries());
  CHECK(RunConfig::keys().size() == defaults.entries().size());
}

TEST_CASE("validation rejects inconsistent settings before any work") {
  testing::TempDir dir("validate");
  RunConfig cfg = tiny_run(dir);
  CHECK_NOTHROW(cfg.validate());
  auto rejects = [&](const std::string& key, const std::string& value) {
    RunConfig c = cfg;
    c.set(key, value);
    CHECK_THROWS_AS(c.validate(), ConfigError);
  };
  rejects("split.fraction", "1");
  rejects("sampler.k", "1");
  rejects("fast.context_len", "4");
  rejects("filter.window", "9");
  rejects("switch.len", "4");
  rejects("switch.fixed_j", "10");
  rejects("generation.mode", "greedy");
  rejects("fast.heads", "3");
  rejects("graph", (dir / "missing.edges").string());
  // the single-stage check does not need the graph
  RunConfig stage_only;
  stage_only.graph = dir / "missing.edges";
  CHECK_NOTHROW(stage_only.validate(RunConfig::Scope::stage));
}

TEST_CASE("pipeline runs end to end, reruns as a no-op and verifies") {
  testing::TempDir dir("pipeline");
  const RunConfig cfg = tiny_run(dir);
  std::ostringstream log1;
  const auto m1 = run_pipeline(cfg, log1);
  CHECK(m1["status"] == "ok");
  CHECK(m1["stages"].size() == 11);
  for (const char* mode : {"fast", "slow", "cascade"}) {
    CHECK(fs::exists(cfg.out_dir / artifacts::generated_walks(mode)));
    CHECK(fs::exists(cfg.out_dir / artifacts::assembled(mode)));
    CHECK(fs::exists(cfg.out_dir / artifacts::eval_report(mode)));
  }
  const std::size_t j = m1["handover"]["j"].get<std::size_t>();
  CHECK(j >= 1);
  CHECK(j < cfg.gen_len);

  // every recorded artifact hash matches the file on disk
  REQUIRE(m1["artifacts"].size() >= 15);
  for (const auto& [rel, hash] : m1["artifacts"].items()) {
    CHECK(git_blob_hash_file(cfg.out_dir / rel) == hash.get<std::string>());
  }

  std::ostringstream log2;
  const auto m2 = run_pipeline(cfg, log2);
  CHECK(log2.str().find("running") == std::string::npos);
  CHECK(m2.dump() == m1.dump());

  // a generation-only change leaves training untouched
  RunConfig changed = cfg;
  changed.set("generation.seed", "99");
  std::ostringstream log3;
  (void)run_pipeline(changed, log3);
  const std::string l3 = log3.str();
  CHECK(l3.find("[train-slow] up to date") != std::string::npos);
  CHECK(l3.find("[curves] up to date") != std::string::npos);
  CHECK(l3.find("[generate] running") != std::string::npos);
  CHECK(l3.find("[eval] running") != std::string::npos);

  // a damaged output is regenerated
  io::write_file_atomic(cfg.out_dir / artifacts::walks, "junk");
  std::ostringstream log4;
  (void)run_pipeline(cfg, log4);
  CHECK(log4.str().find("[sample-walks] running") != std::string::npos);
  CHECK(git_blob_hash_file(cfg.out_dir / artifacts::walks) == m1["artifacts"][artifacts::walks]);
}

TEST_CASE("fixed handover skips the curves") {
  testing::TempDir dir("fixed");
  const RunConfig cfg = tiny_run(dir, {"switch.fixed_j=3", "generation.mode=cascade"});
  std::ostringstream log;
  const auto m = run_pipeline(cfg, log);
  CHECK(m["handover"]["j"] == 3);
  CHECK(log.str().find("[curves]") == std::string::npos);
  CHECK_FALSE(fs::exists(cfg.out_dir / artifacts::generated_walks("fast")));
}

TEST_CASE("a failing stage leaves a failed manifest") {
  testing::TempDir dir("failed");
  RunConfig cfg = tiny_run(dir);
  io::write_file_atomic(dir / "g.edges", "0 1\n1 two\n");
  std::ostringstream log;
  CHECK_THROWS_AS(run_pipeline(cfg, log), StageError);
  const auto m = nlohmann::json::parse(io::read_file(cfg.out_dir / artifacts::manifest));
  CHECK(m["status"] == "failed");
  CHECK(m["failed_stage"] == "prepare");
  CHECK_FALSE(m["error"].get<std::string>().empty());
}

TEST_CASE("command line exit codes and stage-by-stage use") {
  testing::TempDir dir("cli");
  write_tiny_graph(dir / "g.edges", dir / "g.labels");
  const fs::path err = dir / "err.txt";
  const std::string run = " --dir " + (dir / "run").string();

  CHECK(run_cli("pipeline --set bogus=1", err) == 2);
  CHECK(io::read_file(err).find("bogus") != std::string::npos);
  CHECK(run_cli("sample-walks --k 1" + run, err) == 2);
  CHECK(run_cli("frobnicate", err) == 2);

  CHECK(run_cli("train --model slow" + run, err) == 3);
  CHECK(io::read_file(err).find("fsgraph sample-walks") != std::string::npos);

  REQUIRE(run_cli("split --graph " + (dir / "g.edges").string() + run, err) == 0);
  REQUIRE(run_cli("sample-walks --m 400 --k 8" + run, err) == 0);

  // the same stages through the library give identical bytes
  RunConfig cfg;
  cfg.graph = dir / "g.edges";
  cfg.out_dir = dir / "lib";
  cfg.walks_m = 400;
  cfg.walks_k = 8;
  std::ostringstream log;
  (void)stages::prepare(cfg, log);
  (void)stages::split(cfg, log);
  (void)stages::sample_walks(cfg, log);
  CHECK(git_blob_hash_file(dir / "run" / artifacts::walks) ==
        git_blob_hash_file(cfg.out_dir / artifacts::walks));

  CHECK(run_cli("train --model slow --depth 2 --width 16 --heads 2 --context-len 8 --batch 64" + run, err) == 0);
  CHECK(fs::exists(dir / "run" / artifacts::slow_model));
  CHECK_FALSE(fs::exists(dir / "run" / artifacts::fast_model));
}
