#include "ctxgat/config.hpp"
#include "ctxgat/eval.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

using namespace ctxgat;
namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string config, kb, data, ckpt, out, input, split = "test";
  std::optional<std::uint64_t> seed;
  std::optional<int> beam, steps;
  bool two_hop = false, no_es_loss = false, no_ca_gat = false, mean_pool = false, show_attention = false;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "key=value config file with [sections]");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--out", f.out, "output directory");
}

void add_data(CLI::App* cmd, Flags& f) {
  cmd->add_option("--data", f.data, "dataset directory (kb.tsv, stopwords.txt, train/valid/test.jsonl)");
  cmd->add_option("--kb", f.kb, "triples TSV (default: <data>/kb.tsv)");
}

RunConfig effective(const Flags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : RunConfig::load(f.config);
  if (!f.kb.empty()) c.kb = f.kb;
  if (!f.data.empty()) c.data = f.data;
  if (!f.ckpt.empty()) c.ckpt = f.ckpt;
  if (!f.out.empty()) c.out = f.out;
  if (f.seed) c.seed = *f.seed;
  if (f.beam) c.decode.beam = *f.beam;
  if (f.steps) c.train.steps = *f.steps;
  if (f.two_hop) c.model.two_hop = true;
  if (f.no_es_loss) c.es_loss = false;
  if (f.no_ca_gat) c.model.ca_gat = false;
  if (f.mean_pool) c.model.mean_pool_aggregation = true;
  return c;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw CLI::RequiredError(flag);
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

fs::path output_dir(const RunConfig& c, const char* fallback) {
  fs::path out = c.out;
  if (out.empty()) {
    const fs::path ckpt(c.ckpt);
    out = (fs::is_directory(ckpt) ? ckpt : ckpt.parent_path()) / fallback;
  }
  fs::create_directories(out);
  return out;
}

DataBundle load_data(const RunConfig& c, bool need_valid_test) {
  require(c.data, "--data");
  auto d = load_data_dir(c.data, c.kb, need_valid_test);
  for (const auto& [file, n] : d.unresolved_golden)
    std::cerr << "warning: " << n << " golden triples in " << file << " are not in the KB\n";
  return d;
}

fs::path checkpoint_path(const std::string& ckpt) {
  require(ckpt, "--ckpt");
  fs::path p(ckpt);
  if (fs::is_directory(p)) p /= "best";
  if (!fs::is_regular_file(p)) throw DataError("checkpoint " + p.string() + " not found");
  return p;
}

RunConfig with_model(RunConfig c, const ModelState& m) {
  c.model = m.config;
  return c;
}

void write_stopwords(const fs::path& path, const StopWords& sw) {
  std::ostringstream out;
  for (const auto& w : sw) out << w << '\n';
  write_file(path, out.str());
}

int cmd_build_kb(const RunConfig& c) {
  require(c.kb, "--kb");
  require(c.out, "--out");
  const auto kb = load_triples(c.kb);
  const fs::path out(c.out);
  fs::create_directories(out);
  kb.save_tsv(out / "kb.tsv");
  if (!fs::exists(out / "stopwords.txt")) write_stopwords(out / "stopwords.txt", default_stopwords());
  const auto n = kb.counts();
  write_file(out / "kb_stats.json",
             nlohmann::json{{"triples", n.triples}, {"entities", n.entities}, {"relations", n.relations}}.dump(2) +
                 "\n");
  c.save(out / "config.ini");
  std::cout << "kb: " << n.triples << " triples, " << n.entities << " entities, " << n.relations
            << " relations -> " << (out / "kb.tsv").string() << '\n';
  return 0;
}

int cmd_synth(const RunConfig& c) {
  require(c.out, "--out");
  const auto corpus = synth_corpus(c.synth_config());
  const fs::path out(c.out);
  fs::create_directories(out);
  corpus.kb.save_tsv(out / "kb.tsv");
  write_stopwords(out / "stopwords.txt", corpus.stopwords);
  save_dataset(out / "train.jsonl", corpus.train);
  save_dataset(out / "valid.jsonl", corpus.valid);
  save_dataset(out / "test.jsonl", corpus.test);
  c.save(out / "config.ini");
  std::cout << "synthetic corpus: " << corpus.kb.counts().triples << " triples, " << corpus.train.size() << "/"
            << corpus.valid.size() << "/" << corpus.test.size() << " train/valid/test examples -> " << out.string()
            << '\n';
  return 0;
}

int cmd_train(const RunConfig& c) {
  require(c.out, "--out");
  const auto data = load_data(c, false);
  auto model = ModelState::create(c.model, build_vocab(data.train, data.kb), c.seed);
  const auto retriever = make_retriever(data.kb, data.stopwords, model.config, data.train);
  const auto train_set = prepare_all(data.train, model, retriever);
  const auto valid_set = prepare_all(data.valid, model, retriever);
  auto tc = c.train_config();
  tc.out_dir = c.out;
  with_model(c, model).save(fs::path(c.out) / "config.ini");
  model.vocab.save(fs::path(c.out) / "vocab.txt");
  auto result = train(model, train_set, valid_set, tc, [](const LogEntry& e) {
    if (e.valid_ppl)
      std::cout << "step " << e.step << " loss " << e.loss.total << " lm " << e.loss.l_lm << " valid_ppl "
                << *e.valid_ppl << std::endl;
  });
  std::cout << "best valid PPL " << result.best_valid_ppl << " at step " << result.best_step << " -> "
            << (fs::path(c.out) / "best").string() << '\n';
  return 0;
}

const std::vector<DialogueExample>& pick_split(const DataBundle& d, const std::string& split) {
  if (split != "test" && split != "valid" && split != "train")
    throw CLI::ValidationError("--split", "must be train, valid or test");
  return d.split(split);
}

int cmd_evaluate(const RunConfig& c, const std::string& split) {
  const auto model = load_checkpoint(checkpoint_path(c.ckpt));
  const auto data = load_data(c, true);
  const auto retriever = make_retriever(data.kb, data.stopwords, model.config, data.train);
  const auto corpus = prepare_all(pick_split(data, split), model, retriever);
  const auto result = evaluate(model, corpus, data.train, data.kb, data.stopwords, c.decode);
  const auto out = output_dir(c, "eval");
  write_file(out / "metrics.json", result.report.to_json().dump(2) + "\n");
  std::ostringstream gens;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    gens << nlohmann::json{{"post", join(corpus[i].source.post)},
                           {"reference", join(corpus[i].source.response)},
                           {"response", join(result.responses[i].tokens)}}
                .dump()
         << '\n';
  write_file(out / "responses.jsonl", gens.str());
  with_model(c, model).save(out / "config.ini");
  const auto& r = result.report;
  std::cout << "examples " << r.examples << "  PPL " << r.ppl << "  BLEU-1 " << r.bleu[0] << "  BLEU-4 " << r.bleu[3]
            << "  meteor_lite " << r.meteor_lite << "  entity_score " << r.entity_score << " -> "
            << (out / "metrics.json").string() << '\n';
  return 0;
}

int cmd_generate(const RunConfig& c, const std::string& split, const std::string& input) {
  const auto model = load_checkpoint(checkpoint_path(c.ckpt));
  const auto data = load_data(c, input.empty());
  const auto retriever = make_retriever(data.kb, data.stopwords, model.config, data.train);
  std::vector<TokenList> posts;
  if (input.empty()) {
    for (const auto& e : pick_split(data, split)) posts.push_back(e.post);
  } else {
    std::ifstream in(input);
    if (!in) throw DataError("cannot read input file " + input);
    for (std::string line; std::getline(in, line);)
      if (auto toks = tokenize(line); !toks.empty()) posts.push_back(std::move(toks));
  }
  const auto out = output_dir(c, "generate");
  std::ostringstream gens;
  for (const auto& post : posts) {
    const auto r = respond(model, retriever, post, c.decode);
    gens << nlohmann::json{{"post", join(post)}, {"response", join(r.tokens)}}.dump() << '\n';
  }
  write_file(out / "generations.jsonl", gens.str());
  with_model(c, model).save(out / "config.ini");
  std::cout << posts.size() << " responses -> " << (out / "generations.jsonl").string() << '\n';
  return 0;
}

int cmd_attention(const RunConfig& c, const std::string& split) {
  const auto model = load_checkpoint(checkpoint_path(c.ckpt));
  const auto data = load_data(c, true);
  const auto retriever = make_retriever(data.kb, data.stopwords, model.config, data.train);
  const auto corpus = prepare_all(pick_split(data, split), model, retriever);
  std::vector<Response> responses;
  for (const auto& p : corpus) responses.push_back(respond(model, p, c.decode));
  const auto out = output_dir(c, "attention");
  const auto rows = attention_rows(corpus, responses, false);
  write_file(out / "attention.csv", attention_csv(rows));
  nlohmann::json summary = {{"one_hop", summarize_attention(rows).to_json()}};
  if (model.config.two_hop) {
    const auto rows2 = attention_rows(corpus, responses, true);
    write_file(out / "attention_two_hop.csv", attention_csv(rows2));
    summary["two_hop"] = summarize_attention(rows2).to_json();
  }
  write_file(out / "attention_summary.json", summary.dump(2) + "\n");
  with_model(c, model).save(out / "config.ini");
  const auto& one = summary["one_hop"];
  std::cout << "mean attention golden " << one["golden"]["mean"] << " output " << one["output"]["mean"] << " other "
            << one["other"]["mean"] << " overall " << one["overall"]["mean"] << " -> " << out.string() << '\n';
  return 0;
}

int cmd_chat(const RunConfig& c, bool show_attention) {
  const auto model = load_checkpoint(checkpoint_path(c.ckpt));
  const auto data = load_data(c, false);
  const auto retriever = make_retriever(data.kb, data.stopwords, model.config, data.train);
  std::ofstream transcript;
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    with_model(c, model).save(fs::path(c.out) / "config.ini");
    transcript.open(fs::path(c.out) / "transcript.jsonl");
  }
  for (std::string line; std::getline(std::cin, line);) {
    const auto post = tokenize(line);
    if (post.empty()) continue;
    const auto r = respond(model, retriever, post, c.decode);
    std::cout << "retrieved: " << r.knowledge.one_hop_triple_count() << " triples";
    if (r.knowledge.two_hop) std::cout << " (+" << r.knowledge.two_hop_triple_count() << " two-hop)";
    std::cout << "\nresponse: " << join(r.tokens) << '\n';
    if (show_attention) {
      std::vector<std::pair<double, int>> ranked;
      for (std::size_t g = 0; g < r.trace.subgraphs.size(); ++g)
        for (std::size_t j = 0; j < r.trace.subgraphs[g].triple_ids.size(); ++j)
          ranked.emplace_back(r.trace.graph_weights.at(g) * r.trace.subgraphs[g].weights[j],
                              r.trace.subgraphs[g].triple_ids[j]);
      std::stable_sort(ranked.begin(), ranked.end(), [](auto& a, auto& b) { return a.first > b.first; });
      for (std::size_t k = 0; k < ranked.size() && k < 5; ++k) {
        const auto& t = data.kb.triple(ranked[k].second);
        std::cout << "  " << std::fixed << std::setprecision(4) << ranked[k].first << std::defaultfloat << "  "
                  << t.head << ' ' << t.relation << ' ' << t.tail << '\n';
      }
    }
    if (transcript) transcript << nlohmann::json{{"post", join(post)}, {"response", join(r.tokens)}}.dump() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-aware graph-attention dialogue generation"};
  app.require_subcommand(1);
  Flags f;

  auto* build_kb = app.add_subcommand("build-kb", "validate a triples TSV and write it with statistics");
  add_common(build_kb, f);
  build_kb->add_option("--kb", f.kb, "input triples TSV");

  auto* synth = app.add_subcommand("synth-data", "generate a synthetic KB and dialogue corpus");
  add_common(synth, f);

  auto* train_cmd = app.add_subcommand("train", "train a model");
  add_common(train_cmd, f);
  add_data(train_cmd, f);
  train_cmd->add_option("--steps", f.steps, "optimizer steps");
  train_cmd->add_flag("--two-hop", f.two_hop, "add two-hop knowledge");
  train_cmd->add_flag("--no-es-loss", f.no_es_loss, "drop the entity-selection loss");
  train_cmd->add_flag("--no-ca-gat", f.no_ca_gat, "decoder memory is the post only");
  train_cmd->add_flag("--mean-pool-aggregation", f.mean_pool, "mean-pool triples instead of graph attention");

  std::vector<CLI::App*> model_cmds;
  for (auto [name, help] : {std::pair{"evaluate", "compute metrics on a split"},
                            std::pair{"generate", "generate responses"},
                            std::pair{"attention-report", "export first-layer attention weights"},
                            std::pair{"chat", "read posts from stdin and reply"}}) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, f);
    add_data(cmd, f);
    cmd->add_option("--ckpt", f.ckpt, "checkpoint file, or a training output directory");
    cmd->add_option("--beam", f.beam, "beam width (1 = greedy)")->check(CLI::PositiveNumber);
    if (std::string(name) != "chat") cmd->add_option("--split", f.split, "train, valid or test");
    model_cmds.push_back(cmd);
  }
  model_cmds[1]->add_option("--input", f.input, "file with one post per line");
  model_cmds[3]->add_flag("--show-attention", f.show_attention, "print the five most attended triples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const auto c = effective(f);
    if (*build_kb) return cmd_build_kb(c);
    if (*synth) return cmd_synth(c);
    if (*train_cmd) return cmd_train(c);
    if (*model_cmds[0]) return cmd_evaluate(c, f.split);
    if (*model_cmds[1]) return cmd_generate(c, f.split, f.input);
    if (*model_cmds[2]) return cmd_attention(c, f.split);
    if (*model_cmds[3]) return cmd_chat(c, f.show_attention);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 1;
}
