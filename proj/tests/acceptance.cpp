// Prints one PASS/FAIL line per acceptance criterion. Exit status is the
// number of failed criteria.

#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace ctxgat;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ctxgat_accept_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

// Desk-scale model used by the training criteria.
ModelConfig desk_model() {
  ModelConfig m;
  m.d_model = 32;
  m.n_layers = 1;
  m.n_heads = 2;
  m.ffn_mult = 4;
  return m;
}

TrainConfig desk_training(std::uint64_t seed) {
  TrainConfig t;
  t.lr = 1e-3;
  t.batch_size = 16;
  t.steps = 1500;
  t.eval_every = 250;
  t.max_valid = 100;
  t.seed = seed;
  return t;
}

Outcome gradient_check() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (bool two_hop : {false, true}) {
    auto cfg = testing::tiny_config();
    cfg.max_post_len = 8;
    cfg.max_response_len = 4;
    cfg.two_hop = two_hop;
    auto f = testing::make_fixture(cfg, 40, 3);
    auto batch = testing::knowledge_batch(f.train, 2, two_hop);
    if (batch.size() != 2) return {false, "no suitable batch"};
    for (auto& ex : batch) {
      for (auto* side : {&ex.knowledge.one_hop, ex.knowledge.two_hop ? &*ex.knowledge.two_hop : nullptr}) {
        if (!side) continue;
        if (side->size() > 2) side->resize(2);
        for (auto& sg : *side)
          if (sg.triples.size() > 4) sg.triples.resize(4);
      }
      ex.labels = entity_labels(ex.knowledge, ex.source.golden);
    }
    worst = std::max(worst, grad_check([&](Tape& t) { return compute_loss(t, f.model, batch).total; },
                                       f.model.params, 1e-4));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 120.0, fmt("max rel err %.3g (< 1e-4), %.1fs (< 120s)", worst, secs)};
}

Outcome gat_algebra() {
  auto r = oracle::check_gat_algebra(1000, 2024);
  const bool ok = r.max_sum_error < 1e-6 && r.min_weight > 0.0 && r.max_hull_violation <= 1e-12 &&
                  r.max_permutation_diff < 1e-9 && r.max_oracle_diff < 1e-12;
  return {ok, fmt("sum err %.2g (< 1e-6), hull violation %.2g (<= 1e-12), permutation %.2g (< 1e-9), "
                  "oracle %.2g (< 1e-12)",
                  r.max_sum_error, r.max_hull_violation, r.max_permutation_diff, r.max_oracle_diff)};
}

Outcome overfit() {
  const auto t0 = Clock::now();
  SynthConfig sc;
  sc.seed = 5;
  sc.n_examples = 60;
  auto c = synth_corpus(sc);
  c.train.resize(32);
  auto model = ModelState::create(desk_model(), build_vocab(c.train, c.kb), 5);
  auto retriever = make_retriever(c.kb, c.stopwords, model.config, c.train);
  auto set = prepare_all(c.train, model, retriever);
  TrainConfig tc = desk_training(5);
  tc.lr = 3e-3;
  tc.steps = 2000;
  tc.eval_every = 100;
  int reached = -1;
  train(model, set, set, tc, [&](const LogEntry& e) {
    if (reached < 0 && e.valid_ppl && std::log(*e.valid_ppl) < 0.1) reached = e.step;
  });
  const double l_lm = std::log(corpus_nll(model, set).ppl());
  int exact = 0;
  for (const auto& ex : set)
    exact += respond(model, ex, DecodeOptions{model.config.max_response_len, 1}).ids == ex.response_ids;
  const double secs = seconds_since(t0);
  return {l_lm < 0.1 && reached > 0 && exact >= 30 && secs < 300.0,
          fmt("L_lm %.4f (< 0.1, first reached at step %d of 2000), exact %d/32 (>= 30), %.0fs (< 300s)", l_lm,
              reached, exact, secs)};
}

enum class Variant { kFull, kNoCaGat, kNoEsLoss, kMeanPool, kTwoHop };

const char* name(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kNoCaGat: return "no-ca-gat";
    case Variant::kNoEsLoss: return "no-es-loss";
    case Variant::kMeanPool: return "mean-pool";
    case Variant::kTwoHop: return "two-hop";
  }
  return "?";
}

struct RunResult {
  double valid_ppl = 0.0;
  double valid_es = 0.0;
  int two_hop_hits = 0;
  int two_hop_total = 0;
  AttentionSummary trained, untrained;
  double seconds = 0.0;
};

AttentionSummary attention_on(const ModelState& model, const std::vector<PreparedExample>& set) {
  std::vector<Response> responses;
  for (const auto& ex : set) responses.push_back(respond(model, ex, DecodeOptions{1, 1}));
  return summarize_attention(attention_rows(set, responses, false));
}

double non_golden_mean(const AttentionSummary& s) {
  const double n = static_cast<double>(s.count.at("output") + s.count.at("other"));
  return n == 0 ? 0.0
                : (s.mean.at("output") * static_cast<double>(s.count.at("output")) +
                   s.mean.at("other") * static_cast<double>(s.count.at("other"))) /
                      n;
}

RunResult run_variant(const SynthCorpus& c, Variant v, std::uint64_t seed, bool with_attention) {
  const auto t0 = Clock::now();
  auto mc = desk_model();
  auto tc = desk_training(seed);
  if (v == Variant::kNoCaGat) mc.ca_gat = false;
  if (v == Variant::kMeanPool) mc.mean_pool_aggregation = true;
  if (v == Variant::kTwoHop) mc.two_hop = true;
  if (v == Variant::kNoEsLoss) tc.lambda1 = tc.lambda2 = 0.0;
  auto model = ModelState::create(mc, build_vocab(c.train, c.kb), seed);
  auto retriever = make_retriever(c.kb, c.stopwords, mc, c.train);
  auto tr = prepare_all(c.train, model, retriever);
  auto va = prepare_all(c.valid, model, retriever);
  auto te = prepare_all(c.test, model, retriever);

  RunResult r;
  if (with_attention) r.untrained = attention_on(model, te);
  train(model, tr, va, tc);
  if (with_attention) r.trained = attention_on(model, te);

  r.valid_ppl = ppl(model, va);
  const auto ents = c.kb.entities();
  const std::set<std::string, std::less<>> entity_set(ents.begin(), ents.end());
  const DecodeOptions opts{mc.max_response_len, 1};
  Corpus hyps;
  for (const auto& ex : va) hyps.push_back(respond(model, ex, opts).tokens);
  r.valid_es = entity_score(hyps, entity_set);
  for (const auto& ex : te) {
    if (ex.source.two_hop_golden.empty()) continue;
    ++r.two_hop_total;
    const auto toks = respond(model, ex, opts).tokens;
    r.two_hop_hits += std::find(toks.begin(), toks.end(), ex.source.two_hop_golden.front().tail) != toks.end();
  }
  r.seconds = seconds_since(t0);
  std::cout << fmt("  [run] %-10s seed %llu: valid PPL %.4f, ES %.4f, two-hop tail %d/%d, %.0fs", name(v),
                   static_cast<unsigned long long>(seed), r.valid_ppl, r.valid_es, r.two_hop_hits, r.two_hop_total,
                   r.seconds)
            << std::endl;
  return r;
}

struct Experiments {
  std::map<Variant, std::vector<RunResult>> runs;

  double mean(Variant v, double RunResult::*field) const {
    double s = 0;
    for (const auto& r : runs.at(v)) s += r.*field;
    return s / static_cast<double>(runs.at(v).size());
  }
  double tail_rate(Variant v) const {
    double s = 0;
    for (const auto& r : runs.at(v)) s += r.two_hop_total ? double(r.two_hop_hits) / r.two_hop_total : 0.0;
    return s / static_cast<double>(runs.at(v).size());
  }
};

Experiments run_experiments(const SynthCorpus& c) {
  Experiments e;
  for (std::uint64_t seed = 1; seed <= 3; ++seed)
    for (Variant v : {Variant::kFull, Variant::kNoCaGat, Variant::kNoEsLoss, Variant::kMeanPool, Variant::kTwoHop})
      e.runs[v].push_back(run_variant(c, v, seed, v == Variant::kFull && seed == 1));
  return e;
}

Outcome golden_attention(const Experiments& e) {
  const auto& r = e.runs.at(Variant::kFull).front();
  const double g = r.trained.mean.at("golden"), o = non_golden_mean(r.trained);
  const double ug = r.untrained.mean.at("golden"), uo = non_golden_mean(r.untrained);
  const double ratio = o > 0 ? g / o : 0.0;
  return {ratio >= 2.0 && std::abs(ug - uo) < 0.05,
          fmt("trained golden %.4f vs non-golden %.4f, ratio %.2f (>= 2); untrained |diff| %.4f (< 0.05)", g, o,
              ratio, std::abs(ug - uo))};
}

Outcome ablation_direction(const Experiments& e) {
  const double full_ppl = e.mean(Variant::kFull, &RunResult::valid_ppl);
  const double full_es = e.mean(Variant::kFull, &RunResult::valid_es);
  const double noca_ppl = e.mean(Variant::kNoCaGat, &RunResult::valid_ppl);
  const double noca_es = e.mean(Variant::kNoCaGat, &RunResult::valid_es);
  const double noes_es = e.mean(Variant::kNoEsLoss, &RunResult::valid_es);
  const double mean_ppl = e.mean(Variant::kMeanPool, &RunResult::valid_ppl);
  const bool ok = full_ppl < noca_ppl && full_es > noca_es && full_es > noes_es && full_ppl < mean_ppl;
  return {ok, fmt("seed-mean PPL full %.4f vs no-ca-gat %.4f vs mean-pool %.4f (full lowest); "
                  "ES full %.4f vs no-ca-gat %.4f vs no-es-loss %.4f (full highest)",
                  full_ppl, noca_ppl, mean_ppl, full_es, noca_es, noes_es)};
}

Outcome two_hop_gain(const Experiments& e, const SynthCorpus& c) {
  const double one = e.tail_rate(Variant::kFull), two = e.tail_rate(Variant::kTwoHop);
  auto mc = testing::tiny_config();
  auto one_hop = ModelState::create(mc, build_vocab(c.train, c.kb), 1);
  mc.two_hop = true;
  auto two_hop = ModelState::create(mc, build_vocab(c.train, c.kb), 1);
  auto r1 = make_retriever(c.kb, c.stopwords, one_hop.config, c.train);
  auto r2 = make_retriever(c.kb, c.stopwords, two_hop.config, c.train);
  std::size_t checked = 0, bad = 0;
  for (const auto& ex : c.test) {
    auto p1 = prepare(ex, one_hop, r1);
    auto p2 = prepare(ex, two_hop, r2);
    Tape t1(&one_hop.params, false), t2(&two_hop.params, false);
    const auto v = forward_knowledge(t1, one_hop, p1.post_ids, p1.knowledge).memory.rows.rows();
    const auto v_mul = forward_knowledge(t2, two_hop, p2.post_ids, p2.knowledge).memory.rows.rows();
    ++checked;
    bad += v_mul != v + 1;
  }
  return {two > one && bad == 0,
          fmt("seed-mean exact-tail recovery two-hop %.4f vs one-hop %.4f (strictly higher); "
              "V_mul rows = V rows + 1 on %zu/%zu posts",
              two, one, checked - bad, checked)};
}

Outcome metric_oracles() {
  auto agreement = oracle::compare_metrics(20, 99);
  auto f = testing::make_fixture(testing::tiny_config(), 60);
  auto& w = f.model.params.at("out.w");
  std::fill(w.data.begin(), w.data.end(), 0.0);
  const double k = static_cast<double>(f.model.vocab.size());
  const double uniform = ppl(f.model, f.valid);
  const double b1 = bleu_n({{"the", "cat", "sat"}}, {{"the", "cat", "sat", "down"}}, 1);
  const double rounded = std::round(b1 * 1e4) / 1e4;
  return {agreement.max_diff < 1e-9 && std::abs(uniform - k) / k < 0.01 && rounded == 0.7165,
          fmt("max kernel diff %.2g (< 1e-9, worst %s); uniform PPL %.4f vs |V| %.0f (1%%); BLEU-1 %.4f (0.7165)",
              agreement.max_diff, agreement.worst.c_str(), uniform, k, rounded)};
}

Outcome retrieval_totality(const SynthCorpus& c) {
  auto one = make_retriever(c.kb, c.stopwords, desk_model(), c.train);
  auto mc = desk_model();
  mc.two_hop = true;
  auto two = make_retriever(c.kb, c.stopwords, mc, c.train);
  std::size_t with_golden = 0, found = 0, over_cap = 0;
  for (const auto* split : {&c.train, &c.valid, &c.test})
    for (const auto& ex : *split) {
      const auto k = one.retrieve(ex.post);
      for (const auto& g : ex.golden) {
        ++with_golden;
        bool hit = false;
        for (const auto& sg : k.one_hop)
          for (const auto& t : sg.triples) hit = hit || t.same_fact(g);
        found += hit;
      }
      over_cap += two.retrieve(ex.post).two_hop_triple_count() > two.two_hop_cap;
    }

  SynthConfig sc;
  sc.n_examples = 2000;
  const auto again = synth_corpus(sc);
  const bool same_data = dataset_to_jsonl(again.train) == dataset_to_jsonl(c.train) &&
                         dataset_to_jsonl(again.test) == dataset_to_jsonl(c.test);

  auto dir = scratch("determinism");
  for (const char* tag : {"a", "b"}) {
    auto model = ModelState::create(desk_model(), build_vocab(c.train, c.kb), 9);
    auto r = make_retriever(c.kb, c.stopwords, model.config, c.train);
    std::vector<DialogueExample> head(c.train.begin(), c.train.begin() + 64);
    auto set = prepare_all(head, model, r);
    auto tc = desk_training(9);
    tc.steps = 20;
    tc.eval_every = 10;
    train(model, set, set, tc);
    save_checkpoint(dir / tag, model);
  }
  const bool same_ckpt = read_bytes(dir / "a") == read_bytes(dir / "b");
  return {found == with_golden && over_cap == 0 && same_data && same_ckpt,
          fmt("golden retrieved %zu/%zu (100%%); two-hop over cap %zu (0); repeated synth %s, "
              "repeated training checkpoint %s",
              found, with_golden, over_cap, same_data ? "identical" : "differs", same_ckpt ? "identical" : "differs")};
}

int run_cli(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = std::string(CTXGAT_CLI) + " " + args + " >>" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome end_to_end() {
  const auto t0 = Clock::now();
  auto dir = scratch("cli");
  std::ofstream(dir / "run.ini") << "[model]\nd_model=32\nn_layers=1\nn_heads=2\n"
                                    "[train]\nlr=0.001\nbatch_size=16\nsteps=300\neval_every=100\nmax_valid=100\n";
  std::ofstream(dir / "posts.txt") << "what about the beer\nhello\n";
  const auto cfg = "--config " + (dir / "run.ini").string();
  const auto data = (dir / "data").string(), run = (dir / "run").string();
  const auto log = dir / "log.txt";
  const std::vector<std::pair<std::string, std::string>> steps = {
      {"synth-data", "synth-data " + cfg + " --seed 7 --out " + data},
      {"train", "train " + cfg + " --data " + data + " --out " + run},
      {"evaluate", "evaluate --data " + data + " --ckpt " + run + " --split test"},
      {"attention-report", "attention-report --data " + data + " --ckpt " + run + " --split test"},
      {"chat", "chat --data " + data + " --ckpt " + run + " --show-attention < " + (dir / "posts.txt").string()},
  };
  std::string codes;
  bool ok = true;
  for (const auto& [label, args] : steps) {
    const int code = run_cli(args, log);
    codes += label + "=" + std::to_string(code) + " ";
    ok = ok && code == 0;
  }
  const double secs = seconds_since(t0);
  return {ok && secs < 900.0, fmt("exit codes %s, %.0fs (< 900s)", codes.c_str(), secs)};
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&](int id, const char* title, const Outcome& o) {
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << title << ": " << o.detail << std::endl;
    failed += !o.pass;
  };
  auto guarded = [](auto&& f) -> Outcome {
    try {
      return f();
    } catch (const std::exception& e) {
      return {false, std::string("exception: ") + e.what()};
    }
  };

  report(1, "gradient correctness", guarded(gradient_check));
  report(2, "graph attention algebra", guarded(gat_algebra));
  report(3, "overfit 32 examples", guarded(overfit));

  const auto corpus = synth_corpus(SynthConfig{});
  std::optional<Experiments> experiments;
  try {
    experiments = run_experiments(corpus);
  } catch (const std::exception& e) {
    std::cout << "  experiments failed: " << e.what() << std::endl;
  }
  auto need = [&](auto&& f) {
    return [&, f]() -> Outcome {
      if (!experiments) return {false, "experiments did not complete"};
      return f();
    };
  };
  report(4, "golden attention separation", guarded(need([&] { return golden_attention(*experiments); })));
  report(5, "ablation direction", guarded(need([&] { return ablation_direction(*experiments); })));
  report(6, "two-hop gain", guarded(need([&] { return two_hop_gain(*experiments, corpus); })));
  report(7, "metric oracles", guarded(metric_oracles));
  report(8, "retrieval totality and determinism", guarded([&] { return retrieval_totality(corpus); }));
  report(9, "end-to-end CLI", guarded(end_to_end));
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed;
}
