#pragma once

#include "ctxgat/kb.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ctxgat {

// Lowercases, splits on whitespace, and peels the characters .,!?;:"() off
// both ends of each word as separate tokens.
TokenList tokenize(std::string_view text);
std::string join(const TokenList& tokens);

namespace special {
inline constexpr int kPad = 0;
inline constexpr int kCls = 1;
inline constexpr int kSep = 2;
inline constexpr int kBos = 3;
inline constexpr int kEos = 4;
inline constexpr int kUnk = 5;
inline constexpr int kCount = 6;
}  // namespace special

class Vocab {
 public:
  Vocab();

  // Builds from token lists; non-reserved tokens get ids in sorted order.
  static Vocab build(const std::vector<TokenList>& corpora);
  static Vocab from_tokens(const std::vector<std::string>& id_order);

  int id(const std::string& token) const;
  const std::string& token(int id) const;
  bool contains(const std::string& token) const { return ids_.count(token) > 0; }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(const TokenList& tokens) const;
  TokenList decode(const std::vector<int>& ids) const;

  // `token\tid` per line.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

 private:
  void insert(const std::string& token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

struct DialogueExample {
  TokenList post;
  TokenList response;
  std::vector<Triple> golden;
  // Second-hop facts the response verbalizes (synthetic corpora only).
  std::vector<Triple> two_hop_golden;
};

struct LoadedDataset {
  std::vector<DialogueExample> examples;
  std::size_t unresolved_golden = 0;
};

// JSONL: {"post": str, "response": str, "golden": [[h,r,t],...], "two_hop": [[h,r,t],...]?}
LoadedDataset load_dataset(const std::filesystem::path& path, const KnowledgeBase& kb);
LoadedDataset parse_dataset(const std::string& text, const KnowledgeBase& kb,
                            const std::string& source = "<memory>");
void save_dataset(const std::filesystem::path& path, const std::vector<DialogueExample>& examples);
std::string dataset_to_jsonl(const std::vector<DialogueExample>& examples);

// Vocabulary from training posts and responses plus every KB entity and
// relation token (triples are model inputs too).
Vocab build_vocab(const std::vector<DialogueExample>& train, const KnowledgeBase& kb);

struct SynthConfig {
  std::uint64_t seed = 7;
  int n_entities = 50;
  int n_relations = 8;
  int n_triples = 300;
  int n_examples = 2000;
  double two_hop_fraction = 0.3;
  double chitchat_fraction = 0.03;
  int max_anchors = 3;
  // Share of answerable facts reserved for valid/test questions, so that
  // evaluation asks about facts never seen as answers during training.
  double held_out_fraction = 0.2;
};

struct SynthCorpus {
  KnowledgeBase kb;
  StopWords stopwords;
  std::vector<DialogueExample> train;
  std::vector<DialogueExample> valid;
  std::vector<DialogueExample> test;
};

SynthCorpus synth_corpus(const SynthConfig& config);
StopWords default_stopwords();

}  // namespace ctxgat
