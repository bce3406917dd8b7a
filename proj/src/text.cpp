#include "ctxgat/text.hpp"

#include "ctxgat/numerics.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace ctxgat {

namespace {

constexpr std::string_view kPunct = ".,!?;:\"()";

bool is_punct(char c) { return kPunct.find(c) != std::string_view::npos; }

const std::array<const char*, special::kCount> kReserved = {"[PAD]", "[CLS]", "[SEP]",
                                                            "[BOS]", "[EOS]", "[UNK]"};

}  // namespace

TokenList tokenize(std::string_view text) {
  TokenList out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j == i) break;
    std::string word(text.substr(i, j - i));
    for (auto& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    std::size_t lo = 0, hi = word.size();
    while (lo < hi && is_punct(word[lo])) out.emplace_back(1, word[lo++]);
    std::size_t trail = hi;
    while (trail > lo && is_punct(word[trail - 1])) --trail;
    if (trail > lo) out.push_back(word.substr(lo, trail - lo));
    for (std::size_t k = trail; k < hi; ++k) out.emplace_back(1, word[k]);
    i = j;
  }
  return out;
}

std::string join(const TokenList& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

// --- Vocab ----------------------------------------------------------------

Vocab::Vocab() {
  for (const char* t : kReserved) insert(t);
}

void Vocab::insert(const std::string& token) {
  if (ids_.count(token)) return;
  ids_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

Vocab Vocab::build(const std::vector<TokenList>& corpora) {
  std::set<std::string> uniq;
  for (const auto& toks : corpora) uniq.insert(toks.begin(), toks.end());
  Vocab v;
  for (const auto& t : uniq) v.insert(t);
  return v;
}

Vocab Vocab::from_tokens(const std::vector<std::string>& id_order) {
  if (id_order.size() < special::kCount)
    throw DataError("vocab: missing reserved tokens");
  for (int i = 0; i < special::kCount; ++i)
    if (id_order[static_cast<std::size_t>(i)] != kReserved[static_cast<std::size_t>(i)])
      throw DataError("vocab: reserved token " + std::string(kReserved[static_cast<std::size_t>(i)]) +
                      " not at id " + std::to_string(i));
  Vocab v;
  for (std::size_t i = special::kCount; i < id_order.size(); ++i) {
    if (v.contains(id_order[i])) throw DataError("vocab: duplicate token " + id_order[i]);
    v.insert(id_order[i]);
  }
  return v;
}

int Vocab::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? special::kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw std::out_of_range("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const TokenList& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

TokenList Vocab::decode(const std::vector<int>& ids) const {
  TokenList out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::string> order;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto tab = line.rfind('\t');
    if (tab == std::string::npos)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected token<TAB>id");
    const auto id = std::stoul(line.substr(tab + 1));
    if (id != order.size())
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": ids must be contiguous");
    order.push_back(line.substr(0, tab));
  }
  return from_tokens(order);
}

// --- datasets -------------------------------------------------------------

LoadedDataset parse_dataset(const std::string& text, const KnowledgeBase& kb, const std::string& source) {
  LoadedDataset out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) -> DataError {
    return DataError(source + ":" + std::to_string(lineno) + ": " + msg);
  };
  auto read_triples = [&](const nlohmann::json& arr, std::vector<Triple>& dst) {
    if (!arr.is_array()) throw fail("triple list must be an array");
    for (const auto& item : arr) {
      if (!item.is_array() || item.size() != 3 || !item[0].is_string() || !item[1].is_string() ||
          !item[2].is_string())
        throw fail("each triple must be [head, relation, tail]");
      const auto h = item[0].get<std::string>(), r = item[1].get<std::string>(),
                 t = item[2].get<std::string>();
      if (auto id = kb.find(h, r, t)) {
        dst.push_back(kb.triple(*id));
      } else {
        ++out.unresolved_golden;
      }
    }
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw fail(std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("post") || !j.contains("response") || !j["post"].is_string() ||
        !j["response"].is_string())
      throw fail("expected an object with string fields \"post\" and \"response\"");
    DialogueExample ex;
    ex.post = tokenize(j["post"].get<std::string>());
    ex.response = tokenize(j["response"].get<std::string>());
    if (ex.post.empty()) throw fail("empty post");
    if (ex.response.empty()) throw fail("empty response");
    if (j.contains("golden")) read_triples(j["golden"], ex.golden);
    if (j.contains("two_hop")) read_triples(j["two_hop"], ex.two_hop_golden);
    out.examples.push_back(std::move(ex));
  }
  return out;
}

LoadedDataset load_dataset(const std::filesystem::path& path, const KnowledgeBase& kb) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_dataset(ss.str(), kb, path.string());
}

std::string dataset_to_jsonl(const std::vector<DialogueExample>& examples) {
  std::string out;
  auto triples = [](const std::vector<Triple>& ts) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& t : ts) arr.push_back({t.head, t.relation, t.tail});
    return arr;
  };
  for (const auto& ex : examples) {
    nlohmann::json j;
    j["post"] = join(ex.post);
    j["response"] = join(ex.response);
    j["golden"] = triples(ex.golden);
    if (!ex.two_hop_golden.empty()) j["two_hop"] = triples(ex.two_hop_golden);
    out += j.dump();
    out += '\n';
  }
  return out;
}

void save_dataset(const std::filesystem::path& path, const std::vector<DialogueExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << dataset_to_jsonl(examples);
}

Vocab build_vocab(const std::vector<DialogueExample>& train, const KnowledgeBase& kb) {
  std::vector<TokenList> corpora;
  corpora.reserve(train.size() * 2 + 1);
  for (const auto& ex : train) {
    corpora.push_back(ex.post);
    corpora.push_back(ex.response);
  }
  TokenList kb_tokens;
  for (const auto& e : kb.entities())
    for (auto& t : tokenize(e)) kb_tokens.push_back(std::move(t));
  for (const auto& r : kb.relations())
    for (auto& t : tokenize(r)) kb_tokens.push_back(std::move(t));
  corpora.push_back(std::move(kb_tokens));
  return Vocab::build(corpora);
}

// --- synthetic corpus -----------------------------------------------------

namespace {

struct RelationSpec {
  const char* name;
  const char* verbal;
};

constexpr RelationSpec kRelations[] = {
    {"kind", "is a kind of"}, {"use", "is used for"},  {"location", "is found at"},
    {"part", "is part of"},   {"maker", "is made by"}, {"owner", "belongs to"},
    {"cause", "causes"},      {"desire", "wants"},
};

constexpr const char* kPostTemplates[] = {"what is the {rel} of {h}", "tell me the {rel} of {h}",
                                          "do you know the {rel} of {h}"};

struct ChitChat {
  const char* post;
  const char* response;
};

constexpr ChitChat kChitChat[] = {
    {"hello there", "hi , nice to meet you"},
    {"how are you ?", "i am fine , thanks"},
    {"good morning", "good morning to you"},
    {"thank you so much", "you are welcome"},
    {"see you later", "bye for now"},
};

std::string relation_name(int r) {
  if (r < static_cast<int>(std::size(kRelations))) return kRelations[r].name;
  return "relation" + std::to_string(r + 1);
}

std::string relation_verbal(int r) {
  if (r < static_cast<int>(std::size(kRelations))) return kRelations[r].verbal;
  return "relates to";
}

std::string fill(std::string tpl, const std::string& rel, const std::string& head) {
  auto replace = [&](const std::string& key, const std::string& val) {
    if (auto p = tpl.find(key); p != std::string::npos) tpl.replace(p, key.size(), val);
  };
  replace("{rel}", rel);
  replace("{h}", head);
  return tpl;
}

std::vector<std::string> make_entity_names(Rng& rng, int n, const StopWords& reserved) {
  static constexpr std::string_view consonants = "bdfgklmnprstvz";
  static constexpr std::string_view vowels = "aeiou";
  std::set<std::string> seen;
  std::vector<std::string> out;
  while (static_cast<int>(out.size()) < n) {
    const std::size_t syllables = 2 + rng.below(2);
    std::string name;
    for (std::size_t s = 0; s < syllables; ++s) {
      name += consonants[rng.below(consonants.size())];
      name += vowels[rng.below(vowels.size())];
    }
    if (reserved.count(name) || !seen.insert(name).second) continue;
    out.push_back(name);
  }
  return out;
}

}  // namespace

StopWords default_stopwords() {
  return {"a",    "about", "am",  "an",    "and",  "are",  "at",   "be",     "by",   "do",
          "for",  "from",  "i",   "in",    "is",   "it",   "know", "me",     "my",   "not",
          "now",  "of",    "on",  "or",    "so",   "tell", "that", "the",    "there", "this",
          "to",   "what",  "you", "your",  "with", "how",  "hi",   "hello",  "thanks", "thank",
          "good", "see",   "bye", "later", "fine", "nice", "meet", "morning", "welcome", "much",
          "?",    ".",     ",",   "!",     ";",    ":",    "\"",   "(",      ")"};
}

SynthCorpus synth_corpus(const SynthConfig& cfg) {
  if (cfg.n_entities < 2 || cfg.n_relations < 1 || cfg.n_triples < 1 || cfg.n_examples < 10)
    throw std::invalid_argument("synth_corpus: sizes too small");
  const long long n_e = cfg.n_entities;
  if (cfg.n_triples > n_e * n_e)
    throw std::invalid_argument("synth_corpus: n_triples exceeds n_entities^2");
  if (cfg.n_triples > n_e * cfg.n_relations)
    throw std::invalid_argument("synth_corpus: n_triples exceeds n_entities * n_relations");
  if (cfg.two_hop_fraction < 0 || cfg.chitchat_fraction < 0 ||
      cfg.two_hop_fraction + cfg.chitchat_fraction > 1.0)
    throw std::invalid_argument("synth_corpus: example-type fractions must lie in [0,1] and sum to <= 1");
  if (cfg.held_out_fraction < 0 || cfg.held_out_fraction >= 1)
    throw std::invalid_argument("synth_corpus: held_out_fraction must lie in [0,1)");
  if (cfg.max_anchors < 1) throw std::invalid_argument("synth_corpus: max_anchors must be >= 1");

  Rng rng(cfg.seed);
  SynthCorpus out;
  out.stopwords = default_stopwords();

  StopWords reserved = out.stopwords;
  for (int r = 0; r < cfg.n_relations; ++r) reserved.insert(relation_name(r));
  for (const char* w : {"what", "tell", "do", "kind", "used", "found", "part", "made", "belongs",
                        "causes", "wants", "relates"})
    reserved.insert(w);
  const auto names = make_entity_names(rng, cfg.n_entities, reserved);

  // Distinct (head, relation) slots, each with one random tail.
  std::vector<std::size_t> slots(static_cast<std::size_t>(cfg.n_entities * cfg.n_relations));
  for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
  for (std::size_t i = slots.size(); i > 1; --i) std::swap(slots[i - 1], slots[rng.below(i)]);
  slots.resize(static_cast<std::size_t>(cfg.n_triples));
  std::sort(slots.begin(), slots.end());
  for (std::size_t s : slots) {
    const int h = static_cast<int>(s) / cfg.n_relations;
    const int r = static_cast<int>(s) % cfg.n_relations;
    int t = static_cast<int>(rng.below(static_cast<std::size_t>(cfg.n_entities - 1)));
    if (t >= h) ++t;
    out.kb.add(names[static_cast<std::size_t>(h)], relation_name(r), names[static_cast<std::size_t>(t)]);
  }

  // Golden candidates per anchor: head-triples that survive default retrieval.
  // A held-out share of them is only ever asked about in valid/test examples.
  const FilterRules rules;
  std::vector<Triple> candidates;
  for (const auto& e : names) {
    for (const auto& g : retrieve_one_hop({e}, out.kb, rules, out.stopwords))
      for (const auto& t : g.triples)
        if (t.head == e) candidates.push_back(t);
  }
  if (candidates.empty()) throw std::invalid_argument("synth_corpus: KB has no usable anchors");
  std::vector<std::size_t> perm(candidates.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  const auto n_held = static_cast<std::size_t>(std::llround(cfg.held_out_fraction * static_cast<double>(perm.size())));
  std::set<int> held;
  for (std::size_t i = 0; i < n_held; ++i) held.insert(candidates[perm[i]].id);

  struct Pool {
    std::map<std::string, std::vector<Triple>> head_facts;
    std::vector<std::string> anchors;
  };
  Pool seen_pool, held_pool;
  for (const auto& t : candidates) {
    Pool& p = held.count(t.id) ? held_pool : seen_pool;
    auto& facts = p.head_facts[t.head];
    if (facts.empty()) p.anchors.push_back(t.head);
    facts.push_back(t);
  }
  if (seen_pool.anchors.empty() || (n_held > 0 && held_pool.anchors.empty()))
    throw std::invalid_argument("synth_corpus: KB has no usable anchors");
  const Pool& eval_pool = n_held > 0 ? held_pool : seen_pool;

  const std::size_t n = static_cast<std::size_t>(cfg.n_examples);
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_valid = n / 10;

  auto verbalize = [](const Triple& t) {
    const int r = [&] {
      for (int i = 0; i < static_cast<int>(std::size(kRelations)); ++i)
        if (t.relation == kRelations[i].name) return i;
      return static_cast<int>(std::size(kRelations));
    }();
    return t.head + " " + relation_verbal(r) + " " + t.tail;
  };

  std::vector<DialogueExample> all;
  all.reserve(static_cast<std::size_t>(cfg.n_examples));
  for (std::size_t i = 0; i < n; ++i) {
    const Pool& pool = i < n_train ? seen_pool : eval_pool;
    const auto& anchors_pool = pool.anchors;
    const double u = rng.uniform();
    DialogueExample ex;
    std::string post, response;
    const std::string tpl = kPostTemplates[rng.below(std::size(kPostTemplates))];
    if (u < cfg.two_hop_fraction) {
      for (int attempt = 0;; ++attempt) {
        if (attempt > 10000) throw std::invalid_argument("synth_corpus: KB admits no two-hop chains");
        const auto& h = anchors_pool[rng.below(anchors_pool.size())];
        const auto& facts = pool.head_facts.at(h);
        const Triple first = facts[rng.below(facts.size())];
        std::vector<Triple> chain;
        if (auto it = pool.head_facts.find(first.tail); it != pool.head_facts.end())
          for (const Triple& t : it->second)
            if (t.tail != h) chain.push_back(t);
        if (chain.empty()) continue;
        const Triple second = chain[rng.below(chain.size())];
        post = fill(tpl, first.relation, h) + " and the " + second.relation + " of it ?";
        response = verbalize(first) + " and " + verbalize(second);
        ex.golden = {first};
        ex.two_hop_golden = {second};
        break;
      }
    } else if (u < cfg.two_hop_fraction + cfg.chitchat_fraction) {
      const auto& c = kChitChat[rng.below(std::size(kChitChat))];
      post = c.post;
      response = c.response;
    } else {
      const std::size_t k =
          1 + rng.below(static_cast<std::size_t>(std::min<int>(cfg.max_anchors, static_cast<int>(anchors_pool.size()))));
      std::vector<std::string> anchors;
      while (anchors.size() < k) {
        const auto& cand = anchors_pool[rng.below(anchors_pool.size())];
        if (std::find(anchors.begin(), anchors.end(), cand) == anchors.end()) anchors.push_back(cand);
      }
      for (std::size_t a = 0; a < anchors.size(); ++a) {
        const auto& facts = pool.head_facts.at(anchors[a]);
        const Triple fact = facts[rng.below(facts.size())];
        post += a == 0 ? fill(tpl, fact.relation, anchors[a])
                       : " and the " + fact.relation + " of " + anchors[a];
        response += (a == 0 ? "" : " and ") + verbalize(fact);
        ex.golden.push_back(fact);
      }
      post += tpl[0] == 't' ? " ." : " ?";
    }
    ex.post = tokenize(post);
    ex.response = tokenize(response);
    all.push_back(std::move(ex));
  }

  out.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.valid.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train),
                   all.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  out.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), all.end());
  return out;
}

}  // namespace ctxgat
