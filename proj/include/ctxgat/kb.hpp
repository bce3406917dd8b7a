#pragma once

// Commonsense triple store, entity matching, one-hop retrieval with rule
// filtering, and two-hop expansion ranked by TF-IDF similarity to the post.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace ctxgat {

// Raised for unreadable or malformed input files; the CLI maps it to exit 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using TokenList = std::vector<std::string>;
using StopWords = std::set<std::string, std::less<>>;

struct Triple {
  std::string head;
  std::string relation;
  std::string tail;
  int id = -1;

  bool same_fact(const Triple& o) const {
    return head == o.head && relation == o.relation && tail == o.tail;
  }
  friend bool operator==(const Triple&, const Triple&) = default;
};

struct KbCounts {
  std::size_t triples = 0;
  std::size_t entities = 0;
  std::size_t relations = 0;
};

class KnowledgeBase {
 public:
  KnowledgeBase() = default;

  // Appends a fact with the next id; returns the existing id for duplicates.
  int add(std::string head, std::string relation, std::string tail);

  const std::vector<Triple>& triples() const { return triples_; }
  const Triple& triple(int id) const { return triples_.at(static_cast<std::size_t>(id)); }
  // Ids of triples with `entity` as head or tail, ascending. Empty for unknown entities.
  const std::vector<int>& triples_of(const std::string& entity) const;
  bool has_entity(const std::string& entity) const { return entity_index_.count(entity) > 0; }
  std::optional<int> find(const std::string& head, const std::string& relation,
                          const std::string& tail) const;
  const std::set<std::string>& relations() const { return relations_; }
  // Sorted entity list.
  std::vector<std::string> entities() const;
  KbCounts counts() const { return {triples_.size(), entity_index_.size(), relations_.size()}; }

  void save_tsv(const std::filesystem::path& path) const;

 private:
  std::vector<Triple> triples_;
  std::unordered_map<std::string, std::vector<int>> entity_index_;
  std::map<std::string, int> fact_ids_;
  std::set<std::string> relations_;
};

// TSV: head<TAB>relation<TAB>tail per line, '#' comments and blank lines skipped.
KnowledgeBase load_triples(const std::filesystem::path& path);
KnowledgeBase parse_triples(const std::string& text, const std::string& source = "<memory>");
StopWords load_stopwords(const std::filesystem::path& path);

struct SubGraph {
  std::string anchor;
  std::vector<Triple> triples;
};

struct RetrievedKnowledge {
  std::vector<SubGraph> one_hop;
  std::optional<std::vector<SubGraph>> two_hop;

  std::size_t one_hop_triple_count() const;
  std::size_t two_hop_triple_count() const;
};

struct FilterRules {
  std::set<std::string, std::less<>> relation_blocklist;
  std::size_t per_entity_cap = 20;
};

// Distinct post tokens that are KB entities and not stopwords, in first-occurrence order.
std::vector<std::string> match_entities(const TokenList& post_tokens, const KnowledgeBase& kb,
                                        const StopWords& stopwords);

std::vector<SubGraph> retrieve_one_hop(const std::vector<std::string>& entities,
                                       const KnowledgeBase& kb, const FilterRules& rules,
                                       const StopWords& stopwords);

// Tokens of the flattened text "h r t".
TokenList triple_tokens(const Triple& t);

// TF-IDF with smooth idf = ln((1+N)/(1+df)) + 1, fitted on training posts.
class TfidfModel {
 public:
  TfidfModel() = default;
  void fit(const std::vector<TokenList>& documents);
  double idf(const std::string& term) const;
  double cosine(const TokenList& a, const TokenList& b) const;
  std::size_t documents() const { return n_docs_; }

 private:
  std::size_t n_docs_ = 0;
  std::unordered_map<std::string, std::size_t> df_;
};

double tfidf_cosine(const TfidfModel& model, const TokenList& post_tokens, const Triple& triple);

std::vector<SubGraph> expand_two_hop(const std::vector<SubGraph>& one_hop, const KnowledgeBase& kb,
                                     const TokenList& post_tokens, const TfidfModel& tfidf,
                                     const FilterRules& rules, const StopWords& stopwords,
                                     std::size_t cap = 100);

// Bundles everything retrieval needs for a post.
struct Retriever {
  const KnowledgeBase* kb = nullptr;
  StopWords stopwords;
  FilterRules rules;
  TfidfModel tfidf;
  bool two_hop = false;
  std::size_t two_hop_cap = 100;

  RetrievedKnowledge retrieve(const TokenList& post_tokens) const;
};

}  // namespace ctxgat
