#include "helpers.hpp"

#include "ctxgat/config.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace ctxgat;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ctxgat_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = std::string(CTXGAT_CLI) + " " + args + " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config round trips through ini") {
  RunConfig c;
  c.kb = "data/kb.tsv";
  c.seed = 99;
  c.model.d_model = 48;
  c.model.two_hop = true;
  c.model.gat_score = GatScore::kLinear;
  c.es_loss = false;
  c.train.lr = 2.5e-4;
  c.decode.beam = 4;
  c.synth.held_out_fraction = 0.125;
  const auto text = c.to_ini();
  auto back = RunConfig::parse(text);
  CHECK(back.to_ini() == text);
  CHECK(back.model == c.model);
  CHECK(back.train.lr == c.train.lr);
  CHECK(back.synth.held_out_fraction == 0.125);
  CHECK(back.train_config().lambda1 == 0.0);
  CHECK(back.train_config().seed == 99);
  CHECK(back.synth_config().seed == 99);
  CHECK(RunConfig{}.train_config().lambda2 == 1.0);
}

TEST_CASE("partial config keeps defaults") {
  auto c = RunConfig::parse("[model]\nd_model=16\n");
  CHECK(c.model.d_model == 16);
  CHECK(c.model.n_layers == RunConfig{}.model.n_layers);
  CHECK(c.train.steps == RunConfig{}.train.steps);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(RunConfig::parse("[model]\nwidth=3\n"), DataError);
  CHECK_THROWS_AS(RunConfig::parse("[nosuch]\nx=1\n"), DataError);
  CHECK_THROWS_AS(RunConfig::parse("[model]\nd_model=abc\n"), DataError);
  CHECK_THROWS_AS(RunConfig::parse("[ablation]\ntwo_hop=maybe\n"), DataError);
  CHECK_THROWS_AS(RunConfig::parse("[train]\nlr=0.1x\n"), DataError);
  CHECK_THROWS_AS(RunConfig::parse("[model]\ngat_score=cubic\n"), DataError);
  CHECK_THROWS_AS(RunConfig::load("/nonexistent/config.ini"), DataError);
}

#ifdef CTXGAT_CLI
TEST_CASE("command line tool end to end") {
  auto dir = scratch("cli");
  std::ofstream(dir / "small.ini") << "[model]\nd_model=8\nn_layers=1\nn_heads=2\nffn_mult=2\n"
                                      "[train]\nbatch_size=4\neval_every=2\nmax_valid=10\n"
                                      "[decode]\nmax_len=6\n[synth]\nn_examples=80\n";
  const auto cfg = "--config " + (dir / "small.ini").string();
  const auto log = dir / "log.txt";
  const auto data = (dir / "data").string();
  const auto run = (dir / "run").string();

  REQUIRE(run_cli("synth-data " + cfg + " --seed 3 --out " + data, log) == 0);
  CHECK(std::filesystem::exists(dir / "data" / "train.jsonl"));
  REQUIRE(run_cli("build-kb " + cfg + " --kb " + data + "/kb.tsv --out " + (dir / "kb").string(), log) == 0);
  CHECK(slurp(log).find("triples") != std::string::npos);

  REQUIRE(run_cli("train " + cfg + " --data " + data + " --steps 4 --out " + run, log) == 0);
  for (const char* name : {"best", "last", "config.ini", "vocab.txt", "train_log.jsonl"})
    CHECK(std::filesystem::exists(dir / "run" / name));
  auto echoed = RunConfig::load(dir / "run" / "config.ini");
  CHECK(echoed.model.d_model == 8);
  CHECK(echoed.train.steps == 4);

  REQUIRE(run_cli("evaluate --data " + data + " --ckpt " + run + " --split valid", log) == 0);
  const auto metrics = slurp(dir / "run" / "eval" / "metrics.json");
  CHECK(metrics.find("\"ppl\"") != std::string::npos);

  std::ofstream(dir / "posts.txt") << "hello there\n";
  CHECK(run_cli("generate --data " + data + " --ckpt " + run + " --input " + (dir / "posts.txt").string() +
                    " --out " + (dir / "gen").string(),
                log) == 0);
  CHECK(run_cli("chat --data " + data + " --ckpt " + run + " --show-attention < " + (dir / "posts.txt").string(),
                log) == 0);
  CHECK(slurp(log).find("response:") != std::string::npos);

  CHECK(run_cli("train --no-such-flag", log) == 1);
  CHECK(run_cli("", log) == 1);
  CHECK(run_cli("evaluate --data " + data + " --ckpt " + (dir / "missing").string(), log) == 2);
  CHECK(run_cli("train --data " + (dir / "nowhere").string() + " --out " + run, log) == 2);
  std::ofstream(dir / "bad.ini") << "[model]\nwidth=3\n";
  CHECK(run_cli("synth-data --config " + (dir / "bad.ini").string() + " --out " + data, log) == 2);
}
#endif
