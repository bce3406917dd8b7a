#include "ctxgat/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace ctxgat {

namespace {

namespace pt = boost::property_tree;

struct Field {
  const char* section;
  const char* key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

std::string format(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
T parse_value(const std::string& s) {
  if constexpr (std::is_same_v<T, bool>) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw std::invalid_argument("expected a boolean");
  } else if constexpr (std::is_same_v<T, std::string>) {
    return s;
  } else if constexpr (std::is_floating_point_v<T>) {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } else {
    T v{};
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw std::invalid_argument("expected an integer");
    return v;
  }
}

template <class T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>) return v ? "true" : "false";
  else if constexpr (std::is_same_v<T, std::string>) return v;
  else if constexpr (std::is_floating_point_v<T>) return format(v);
  else return std::to_string(v);
}

template <class T>
Field bind(const char* section, const char* key, T& ref) {
  return Field{section, key, [&ref](const std::string& s) { ref = parse_value<T>(s); },
               [&ref] { return format_value(ref); }};
}

std::vector<Field> fields(RunConfig& c) {
  auto& m = c.model;
  auto& t = c.train;
  auto& s = c.synth;
  std::vector<Field> f = {
      bind("paths", "kb", c.kb),
      bind("paths", "data", c.data),
      bind("paths", "ckpt", c.ckpt),
      bind("paths", "out", c.out),
      bind("run", "seed", c.seed),
      bind("model", "d_model", m.d_model),
      bind("model", "n_layers", m.n_layers),
      bind("model", "n_heads", m.n_heads),
      bind("model", "ffn_mult", m.ffn_mult),
      bind("model", "max_post_len", m.max_post_len),
      bind("model", "max_response_len", m.max_response_len),
      bind("model", "max_triple_len", m.max_triple_len),
      Field{"model", "gat_score", [&m](const std::string& v) { m.gat_score = gat_score_from_string(v); },
            [&m] { return to_string(m.gat_score); }},
      bind("ablation", "es_loss", c.es_loss),
      bind("ablation", "ca_gat", m.ca_gat),
      bind("ablation", "mean_pool_aggregation", m.mean_pool_aggregation),
      bind("ablation", "two_hop", m.two_hop),
      bind("train", "lr", t.lr),
      bind("train", "batch_size", t.batch_size),
      bind("train", "steps", t.steps),
      bind("train", "eval_every", t.eval_every),
      bind("train", "lambda1", t.lambda1),
      bind("train", "lambda2", t.lambda2),
      bind("train", "clip_norm", t.clip_norm),
      bind("train", "max_valid", t.max_valid),
      bind("decode", "beam", c.decode.beam),
      bind("decode", "max_len", c.decode.max_len),
      bind("synth", "n_entities", s.n_entities),
      bind("synth", "n_relations", s.n_relations),
      bind("synth", "n_triples", s.n_triples),
      bind("synth", "n_examples", s.n_examples),
      bind("synth", "two_hop_fraction", s.two_hop_fraction),
      bind("synth", "chitchat_fraction", s.chitchat_fraction),
      bind("synth", "held_out_fraction", s.held_out_fraction),
      bind("synth", "max_anchors", s.max_anchors),
  };
  return f;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text, const std::string& source) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw DataError(source + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  RunConfig c;
  auto fs = fields(c);
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw DataError(source + ": key '" + section + "' outside of any [section]");
    for (const auto& [key, value] : body) {
      auto it = std::find_if(fs.begin(), fs.end(), [&](const Field& f) { return section == f.section && key == f.key; });
      if (it == fs.end()) throw DataError(source + ": unknown setting [" + section + "] " + key);
      try {
        it->set(value.data());
      } catch (const std::exception& e) {
        throw DataError(source + ": bad value '" + value.data() + "' for [" + section + "] " + key + ": " + e.what());
      }
    }
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

std::string RunConfig::to_ini() const {
  RunConfig copy = *this;
  std::ostringstream out;
  std::string current;
  for (const auto& f : fields(copy)) {
    if (current != f.section) {
      out << (current.empty() ? "" : "\n") << '[' << f.section << "]\n";
      current = f.section;
    }
    out << f.key << '=' << f.get() << '\n';
  }
  return out.str();
}

void RunConfig::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_ini();
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = seed;
  if (!es_loss) t.lambda1 = t.lambda2 = 0.0;
  return t;
}

SynthConfig RunConfig::synth_config() const {
  SynthConfig s = synth;
  s.seed = seed;
  return s;
}

namespace {

std::vector<DialogueExample> load_split(const std::filesystem::path& path, const KnowledgeBase& kb, bool required,
                                        std::map<std::string, std::size_t>& unresolved) {
  if (!std::filesystem::exists(path)) {
    if (required) throw DataError("missing dataset file " + path.string());
    return {};
  }
  auto loaded = load_dataset(path, kb);
  if (loaded.unresolved_golden > 0) unresolved[path.filename().string()] = loaded.unresolved_golden;
  return std::move(loaded.examples);
}

}  // namespace

const std::vector<DialogueExample>& DataBundle::split(std::string_view name) const {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  throw std::invalid_argument("unknown split '" + std::string(name) + "', expected train, valid or test");
}

DataBundle load_data_dir(const std::filesystem::path& dir, const std::filesystem::path& kb, bool need_valid_test) {
  if (!std::filesystem::is_directory(dir)) throw DataError("data directory " + dir.string() + " does not exist");
  DataBundle d;
  d.kb = load_triples(kb.empty() ? dir / "kb.tsv" : kb);
  d.stopwords =
      std::filesystem::exists(dir / "stopwords.txt") ? load_stopwords(dir / "stopwords.txt") : default_stopwords();
  d.train = load_split(dir / "train.jsonl", d.kb, true, d.unresolved_golden);
  d.valid = load_split(dir / "valid.jsonl", d.kb, need_valid_test, d.unresolved_golden);
  d.test = load_split(dir / "test.jsonl", d.kb, need_valid_test, d.unresolved_golden);
  return d;
}

}  // namespace ctxgat
