#pragma once

// Post -> retrieval -> encoder -> graph attention -> decoder memory, shared by
// training, evaluation and the command-line tools.

#include "ctxgat/decoder.hpp"
#include "ctxgat/gat.hpp"

#include <optional>

namespace ctxgat {

struct EntityLabels {
  std::vector<std::vector<int>> triples;  // per one-hop subgraph, per triple
  std::vector<int> subgraphs;
};

// Triple label 1 iff the fact matches a golden triple; subgraph label 1 iff
// it holds at least one golden triple.
EntityLabels entity_labels(const RetrievedKnowledge& retrieved, const std::vector<Triple>& golden);

struct PreparedExample {
  DialogueExample source;
  std::vector<int> post_ids;      // truncated to max_post_len
  std::vector<int> response_ids;  // truncated to max_response_len, no [BOS]/[EOS]
  RetrievedKnowledge knowledge;
  EntityLabels labels;
};

PreparedExample prepare(const DialogueExample& example, const ModelState& model, const Retriever& retriever);
std::vector<PreparedExample> prepare_all(const std::vector<DialogueExample>& examples, const ModelState& model,
                                         const Retriever& retriever);

struct KnowledgeForward {
  PostEncoding post;
  std::optional<Var> triple_embs;  // all one-hop triples, subgraph by subgraph
  std::optional<Var> sub_roots;    // one row per one-hop subgraph
  std::vector<Var> sub_attn;
  std::optional<Var> graph_attn;
  std::optional<TwoHopAggregate> two_hop;
  DecoderMemory memory;
};

KnowledgeForward forward_knowledge(Tape& t, const ModelState& model, std::span<const int> post_ids,
                                   const RetrievedKnowledge& knowledge);

// First-layer attention weights of a forward pass, laid out per subgraph.
AttentionTrace attention_trace(const KnowledgeForward& fwd, const RetrievedKnowledge& knowledge);

struct Response {
  std::vector<int> ids;
  TokenList tokens;
  RetrievedKnowledge knowledge;
  AttentionTrace trace;
};

Response respond(const ModelState& model, const Retriever& retriever, const TokenList& post,
                 const DecodeOptions& options);
Response respond(const ModelState& model, const PreparedExample& example, const DecodeOptions& options);

// Retriever over a KB configured the way `model` expects (two-hop on when the
// model uses it), with TF-IDF fitted on the given training posts.
Retriever make_retriever(const KnowledgeBase& kb, const StopWords& stopwords, const ModelConfig& config,
                         const std::vector<DialogueExample>& train);

}  // namespace ctxgat
