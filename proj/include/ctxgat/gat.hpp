#pragma once

// Context-aware graph attention: triples are scored against the post context
// and pooled into one root per subgraph, then the roots are scored and pooled
// into a global root. The two-hop variant also conditions on the one-hop root.

#include "ctxgat/model.hpp"

#include <optional>
#include <span>
#include <vector>

namespace ctxgat {

struct ScoreWeights {
  GatScore kind = GatScore::kAdditive;
  Var W;  // additive: d x (k*d)
  Var v;  // additive: 1 x d
  Var w;  // linear:   1 x (k*d)
};

struct GatWeights {
  ScoreWeights sub;
  ScoreWeights graph;
  std::optional<ScoreWeights> sub2;
  std::optional<ScoreWeights> graph2;
};

GatWeights gat_weights(Tape& t, const ModelState& model);

// Node scores beta (1 x N) for rows of `nodes` given shared context rows.
Var attention_scores(Var nodes, std::span<const Var> context, const ScoreWeights& w);

struct Aggregate {
  Var root;  // 1 x d
  Var attn;  // 1 x N
};

Aggregate aggregate_subgraph(Var triple_embs, Var emb_c, const GatWeights& w);
Aggregate aggregate_graph(Var roots, Var emb_c, const GatWeights& w);

struct TwoHopAggregate {
  Var root;                      // rt of the two-hop graph, 1 x d
  std::vector<Var> subgraph_attn;  // one 1 x N_i row per two-hop subgraph
  Var graph_attn;                // 1 x G
};

TwoHopAggregate aggregate_two_hop(std::span<const Var> groups, Var rt_one, Var emb_c,
                                  const GatWeights& w);

struct AttentionTrace {
  struct Group {
    std::string anchor;
    std::vector<int> triple_ids;
    std::vector<double> weights;
  };
  std::vector<Group> subgraphs;
  std::vector<double> graph_weights;
  std::vector<Group> two_hop_subgraphs;
  std::vector<double> two_hop_graph_weights;
};

}  // namespace ctxgat
