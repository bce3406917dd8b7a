#include "ctxgat/config.hpp"
#include "ctxgat/eval.hpp"

#include <fstream>

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace ctxgat;

namespace {

Corpus to_corpus(const std::vector<std::string>& lines) {
  Corpus c;
  for (const auto& l : lines) c.push_back(tokenize(l));
  return c;
}

py::object json_to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

class Bot {
 public:
  Bot(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir)
      : model_(load_checkpoint(std::filesystem::is_directory(checkpoint) ? checkpoint / "best" : checkpoint)),
        data_(load_data_dir(data_dir, {}, false)),
        retriever_(make_retriever(data_.kb, data_.stopwords, model_.config, data_.train)) {}

  py::dict respond(const std::string& post, int beam, int max_len) const {
    const auto tokens = tokenize(post);
    if (tokens.empty()) throw std::invalid_argument("respond: empty post");
    Response r;
    {
      py::gil_scoped_release release;
      r = ctxgat::respond(model_, retriever_, tokens, DecodeOptions{max_len, beam});
    }
    py::list knowledge;
    for (std::size_t g = 0; g < r.trace.subgraphs.size(); ++g) {
      const auto& group = r.trace.subgraphs[g];
      for (std::size_t j = 0; j < group.triple_ids.size(); ++j) {
        const auto& t = data_.kb.triple(group.triple_ids[j]);
        knowledge.append(py::make_tuple(t.head, t.relation, t.tail, group.weights[j], r.trace.graph_weights.at(g)));
      }
    }
    py::dict out;
    out["response"] = join(r.tokens);
    out["tokens"] = r.tokens;
    out["knowledge"] = knowledge;
    out["two_hop_triples"] = r.knowledge.two_hop_triple_count();
    return out;
  }

  py::object evaluate(const std::string& split, int beam, int max_len) const {
    const auto corpus = prepare_all(data_.split(split), model_, retriever_);
    MetricReport report;
    {
      py::gil_scoped_release release;
      report = ctxgat::evaluate(model_, corpus, data_.train, data_.kb, data_.stopwords, DecodeOptions{max_len, beam})
                   .report;
    }
    return json_to_py(report.to_json());
  }

  double perplexity(const std::string& split) const {
    const auto corpus = prepare_all(data_.split(split), model_, retriever_);
    return ppl(model_, corpus);
  }

  py::object config() const { return json_to_py(model_.config.to_json()); }

 private:
  ModelState model_;
  DataBundle data_;
  Retriever retriever_;
};

py::dict run_training(const std::filesystem::path& data_dir, const std::filesystem::path& out_dir,
                      const std::string& config, std::optional<int> steps, std::optional<std::uint64_t> seed) {
  RunConfig c = config.empty() ? RunConfig{} : RunConfig::load(config);
  if (steps) c.train.steps = *steps;
  if (seed) c.seed = *seed;
  c.data = data_dir.string();
  c.out = out_dir.string();
  const auto data = load_data_dir(data_dir, c.kb, false);
  auto model = ModelState::create(c.model, build_vocab(data.train, data.kb), c.seed);
  const auto retriever = make_retriever(data.kb, data.stopwords, model.config, data.train);
  const auto train_set = prepare_all(data.train, model, retriever);
  const auto valid_set = prepare_all(data.valid, model, retriever);
  auto tc = c.train_config();
  tc.out_dir = out_dir;
  c.model = model.config;
  c.save(out_dir / "config.ini");
  model.vocab.save(out_dir / "vocab.txt");
  TrainResult result;
  {
    py::gil_scoped_release release;
    result = train(model, train_set, valid_set, tc);
  }
  py::list losses;
  for (const auto& e : result.log) losses.append(e.loss.total);
  py::dict out;
  out["best_step"] = result.best_step;
  out["best_valid_ppl"] = result.best_valid_ppl;
  out["losses"] = losses;
  return out;
}

py::dict synth_data(const std::filesystem::path& out_dir, std::uint64_t seed, int n_examples) {
  SynthConfig sc;
  sc.seed = seed;
  sc.n_examples = n_examples;
  const auto c = synth_corpus(sc);
  std::filesystem::create_directories(out_dir);
  c.kb.save_tsv(out_dir / "kb.tsv");
  {
    std::ofstream sw(out_dir / "stopwords.txt");
    for (const auto& w : c.stopwords) sw << w << '\n';
  }
  save_dataset(out_dir / "train.jsonl", c.train);
  save_dataset(out_dir / "valid.jsonl", c.valid);
  save_dataset(out_dir / "test.jsonl", c.test);
  py::dict out;
  out["triples"] = c.kb.counts().triples;
  out["train"] = c.train.size();
  out["valid"] = c.valid.size();
  out["test"] = c.test.size();
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Knowledge-grounded dialogue generation with context-aware graph attention";

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);

  m.def("tokenize", [](const std::string& s) { return tokenize(s); }, py::arg("text"));
  m.def(
      "bleu", [](const std::vector<std::string>& h, const std::vector<std::string>& r, int n) {
        return bleu_n(to_corpus(h), to_corpus(r), n);
      },
      py::arg("hypotheses"), py::arg("references"), py::arg("n") = 4);
  m.def(
      "nist", [](const std::vector<std::string>& h, const std::vector<std::string>& r, int n) {
        return nist_n(to_corpus(h), to_corpus(r), n);
      },
      py::arg("hypotheses"), py::arg("references"), py::arg("n") = 4);
  m.def(
      "meteor_lite", [](const std::vector<std::string>& h, const std::vector<std::string>& r) {
        return meteor_lite(to_corpus(h), to_corpus(r));
      },
      py::arg("hypotheses"), py::arg("references"));
  m.def(
      "dist", [](const std::vector<std::string>& h, int n) { return dist_n(to_corpus(h), n); },
      py::arg("hypotheses"), py::arg("n") = 2);
  m.def(
      "ent", [](const std::vector<std::string>& h, int n) { return ent_n(to_corpus(h), n); }, py::arg("hypotheses"),
      py::arg("n") = 4);
  m.def(
      "entity_score",
      [](const std::vector<std::string>& h, const std::vector<std::string>& entities) {
        return entity_score(to_corpus(h), std::set<std::string, std::less<>>(entities.begin(), entities.end()));
      },
      py::arg("hypotheses"), py::arg("entities"));

  m.def("synth_data", &synth_data, py::arg("out_dir"), py::arg("seed") = 7, py::arg("n_examples") = 2000,
        "Write a synthetic KB and dialogue corpus to out_dir.");
  m.def("train", &run_training, py::arg("data_dir"), py::arg("out_dir"), py::arg("config") = "",
        py::arg("steps") = py::none(), py::arg("seed") = py::none(),
        "Train a model; checkpoints and the log go to out_dir.");

  py::class_<Bot>(m, "Bot")
      .def(py::init<const std::filesystem::path&, const std::filesystem::path&>(), py::arg("checkpoint"),
           py::arg("data_dir"))
      .def("respond", &Bot::respond, py::arg("post"), py::arg("beam") = 1, py::arg("max_len") = 32)
      .def("evaluate", &Bot::evaluate, py::arg("split") = "test", py::arg("beam") = 1, py::arg("max_len") = 32)
      .def("perplexity", &Bot::perplexity, py::arg("split") = "test")
      .def_property_readonly("config", &Bot::config);
}
