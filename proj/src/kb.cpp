#include "ctxgat/kb.hpp"

#include "ctxgat/text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace ctxgat {

namespace {

bool valid_entity(const std::string& s) {
  return !s.empty() && std::none_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::vector<int> kNoTriples;

}  // namespace

int KnowledgeBase::add(std::string head, std::string relation, std::string tail) {
  if (!valid_entity(head) || !valid_entity(tail))
    throw DataError("invalid entity in triple (" + head + ", " + relation + ", " + tail + ")");
  if (relation.empty()) throw DataError("empty relation for (" + head + ", _, " + tail + ")");
  const std::string key = head + '\t' + relation + '\t' + tail;
  if (auto it = fact_ids_.find(key); it != fact_ids_.end()) return it->second;
  const int id = static_cast<int>(triples_.size());
  fact_ids_.emplace(key, id);
  relations_.insert(relation);
  entity_index_[head].push_back(id);
  if (tail != head) entity_index_[tail].push_back(id);
  triples_.push_back(Triple{std::move(head), std::move(relation), std::move(tail), id});
  return id;
}

const std::vector<int>& KnowledgeBase::triples_of(const std::string& entity) const {
  auto it = entity_index_.find(entity);
  return it == entity_index_.end() ? kNoTriples : it->second;
}

std::optional<int> KnowledgeBase::find(const std::string& head, const std::string& relation,
                                       const std::string& tail) const {
  auto it = fact_ids_.find(head + '\t' + relation + '\t' + tail);
  if (it == fact_ids_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> KnowledgeBase::entities() const {
  std::vector<std::string> out;
  out.reserve(entity_index_.size());
  for (const auto& [e, _] : entity_index_) out.push_back(e);
  std::sort(out.begin(), out.end());
  return out;
}

void KnowledgeBase::save_tsv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& t : triples_) out << t.head << '\t' << t.relation << '\t' << t.tail << '\n';
}

KnowledgeBase parse_triples(const std::string& text, const std::string& source) {
  KnowledgeBase kb;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty() || fields[2].empty())
      throw DataError(source + ":" + std::to_string(lineno) +
                      ": expected head<TAB>relation<TAB>tail");
    try {
      kb.add(fields[0], fields[1], fields[2]);
    } catch (const DataError& e) {
      throw DataError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (kb.triples().empty()) throw DataError(source + ": no triples");
  return kb;
}

KnowledgeBase load_triples(const std::filesystem::path& path) {
  return parse_triples(read_file(path), path.string());
}

StopWords load_stopwords(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  StopWords out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.insert(line);
  }
  return out;
}

std::size_t RetrievedKnowledge::one_hop_triple_count() const {
  std::size_t n = 0;
  for (const auto& g : one_hop) n += g.triples.size();
  return n;
}

std::size_t RetrievedKnowledge::two_hop_triple_count() const {
  std::size_t n = 0;
  if (two_hop)
    for (const auto& g : *two_hop) n += g.triples.size();
  return n;
}

std::vector<std::string> match_entities(const TokenList& post_tokens, const KnowledgeBase& kb,
                                        const StopWords& stopwords) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& tok : post_tokens) {
    if (stopwords.count(tok) || !kb.has_entity(tok)) continue;
    if (seen.insert(tok).second) out.push_back(tok);
  }
  return out;
}

namespace {

bool passes(const Triple& t, const std::string& anchor, const FilterRules& rules,
            const StopWords& stopwords) {
  if (rules.relation_blocklist.count(t.relation)) return false;
  const std::string& other = t.head == anchor ? t.tail : t.head;
  return !stopwords.count(other);
}

}  // namespace

std::vector<SubGraph> retrieve_one_hop(const std::vector<std::string>& entities,
                                       const KnowledgeBase& kb, const FilterRules& rules,
                                       const StopWords& stopwords) {
  std::vector<SubGraph> out;
  for (const auto& e : entities) {
    SubGraph g{e, {}};
    for (int id : kb.triples_of(e)) {
      if (g.triples.size() >= rules.per_entity_cap) break;
      const Triple& t = kb.triple(id);
      if (passes(t, e, rules, stopwords)) g.triples.push_back(t);
    }
    if (!g.triples.empty()) out.push_back(std::move(g));
  }
  return out;
}

TokenList triple_tokens(const Triple& t) {
  TokenList out = tokenize(t.head);
  for (auto& s : tokenize(t.relation)) out.push_back(std::move(s));
  for (auto& s : tokenize(t.tail)) out.push_back(std::move(s));
  return out;
}

void TfidfModel::fit(const std::vector<TokenList>& documents) {
  n_docs_ = documents.size();
  df_.clear();
  for (const auto& doc : documents) {
    std::unordered_set<std::string> uniq(doc.begin(), doc.end());
    for (const auto& term : uniq) ++df_[term];
  }
}

double TfidfModel::idf(const std::string& term) const {
  auto it = df_.find(term);
  const double df = it == df_.end() ? 0.0 : static_cast<double>(it->second);
  return std::log((1.0 + static_cast<double>(n_docs_)) / (1.0 + df)) + 1.0;
}

double TfidfModel::cosine(const TokenList& a, const TokenList& b) const {
  std::map<std::string, double> va, vb;
  for (const auto& t : a) va[t] += 1.0;
  for (const auto& t : b) vb[t] += 1.0;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (auto& [t, c] : va) {
    c *= idf(t);
    na += c * c;
  }
  for (auto& [t, c] : vb) {
    c *= idf(t);
    nb += c * c;
    if (auto it = va.find(t); it != va.end()) dot += it->second * c;
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), 0.0, 1.0);
}

double tfidf_cosine(const TfidfModel& model, const TokenList& post_tokens, const Triple& triple) {
  return model.cosine(post_tokens, triple_tokens(triple));
}

std::vector<SubGraph> expand_two_hop(const std::vector<SubGraph>& one_hop, const KnowledgeBase& kb,
                                     const TokenList& post_tokens, const TfidfModel& tfidf,
                                     const FilterRules& rules, const StopWords& stopwords,
                                     std::size_t cap) {
  std::unordered_set<std::string> anchors;
  std::unordered_set<int> one_hop_ids;
  for (const auto& g : one_hop) {
    anchors.insert(g.anchor);
    for (const auto& t : g.triples) one_hop_ids.insert(t.id);
  }
  std::vector<std::string> frontier;
  std::unordered_set<std::string> in_frontier;
  for (const auto& g : one_hop)
    for (const auto& t : g.triples)
      for (const std::string* e : {&t.head, &t.tail})
        if (!anchors.count(*e) && in_frontier.insert(*e).second) frontier.push_back(*e);

  struct Candidate {
    double score;
    int id;
    std::size_t frontier_index;
  };
  std::vector<Candidate> candidates;
  std::unordered_set<int> taken;
  for (std::size_t f = 0; f < frontier.size(); ++f) {
    for (int id : kb.triples_of(frontier[f])) {
      if (one_hop_ids.count(id) || taken.count(id)) continue;
      const Triple& t = kb.triple(id);
      if (!passes(t, frontier[f], rules, stopwords)) continue;
      taken.insert(id);
      candidates.push_back({tfidf_cosine(tfidf, post_tokens, t), id, f});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  });
  if (candidates.size() > cap) candidates.resize(cap);

  std::vector<std::vector<int>> grouped(frontier.size());
  for (const auto& c : candidates) grouped[c.frontier_index].push_back(c.id);
  std::vector<SubGraph> out;
  for (std::size_t f = 0; f < frontier.size(); ++f) {
    if (grouped[f].empty()) continue;
    std::sort(grouped[f].begin(), grouped[f].end());
    SubGraph g{frontier[f], {}};
    for (int id : grouped[f]) g.triples.push_back(kb.triple(id));
    out.push_back(std::move(g));
  }
  return out;
}

RetrievedKnowledge Retriever::retrieve(const TokenList& post_tokens) const {
  RetrievedKnowledge out;
  const auto entities = match_entities(post_tokens, *kb, stopwords);
  out.one_hop = retrieve_one_hop(entities, *kb, rules, stopwords);
  if (two_hop) {
    out.two_hop = out.one_hop.empty()
                      ? std::vector<SubGraph>{}
                      : expand_two_hop(out.one_hop, *kb, post_tokens, tfidf, rules, stopwords, two_hop_cap);
  }
  return out;
}

}  // namespace ctxgat
