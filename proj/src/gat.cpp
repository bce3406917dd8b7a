#include "ctxgat/gat.hpp"

namespace ctxgat {

namespace {

ScoreWeights load_score(Tape& t, const std::string& prefix, GatScore kind) {
  ScoreWeights s;
  s.kind = kind;
  if (kind == GatScore::kAdditive) {
    s.W = t.param(prefix + ".W");
    s.v = t.param(prefix + ".v");
  } else {
    s.w = t.param(prefix + ".w");
  }
  return s;
}

Aggregate pool(Var nodes, std::span<const Var> context, const ScoreWeights& w) {
  if (nodes.rows() == 0) throw std::invalid_argument("aggregate: no nodes");
  Var a = softmax(attention_scores(nodes, context, w));
  return Aggregate{matmul(a, nodes), a};
}

}  // namespace

GatWeights gat_weights(Tape& t, const ModelState& model) {
  const auto kind = model.config.gat_score;
  GatWeights w;
  w.sub = load_score(t, "gat.sub", kind);
  w.graph = load_score(t, "gat.graph", kind);
  if (model.config.two_hop) {
    w.sub2 = load_score(t, "gat.sub2", kind);
    w.graph2 = load_score(t, "gat.graph2", kind);
  }
  return w;
}

Var attention_scores(Var nodes, std::span<const Var> context, const ScoreWeights& w) {
  const std::size_t n = nodes.rows();
  std::vector<Var> parts{nodes};
  for (Var c : context) parts.push_back(repeat_rows(c, n));
  Var z = concat_cols(parts);
  Var scores = w.kind == GatScore::kAdditive ? matmul(tanh(matmul(z, transpose(w.W))), transpose(w.v))
                                             : matmul(z, transpose(w.w));
  return transpose(scores);
}

Aggregate aggregate_subgraph(Var triple_embs, Var emb_c, const GatWeights& w) {
  if (triple_embs.rows() == 0) throw std::invalid_argument("aggregate_subgraph: empty subgraph");
  const Var ctx[] = {emb_c};
  return pool(triple_embs, ctx, w.sub);
}

Aggregate aggregate_graph(Var roots, Var emb_c, const GatWeights& w) {
  if (roots.rows() == 0) throw std::invalid_argument("aggregate_graph: no subgraph roots");
  const Var ctx[] = {emb_c};
  return pool(roots, ctx, w.graph);
}

TwoHopAggregate aggregate_two_hop(std::span<const Var> groups, Var rt_one, Var emb_c, const GatWeights& w) {
  if (groups.empty()) throw std::invalid_argument("aggregate_two_hop: empty two-hop set");
  if (!w.sub2 || !w.graph2) throw std::logic_error("aggregate_two_hop: model has no two-hop weights");
  const Var ctx[] = {rt_one, emb_c};
  TwoHopAggregate out;
  std::vector<Var> roots;
  for (Var g : groups) {
    auto agg = pool(g, ctx, *w.sub2);
    roots.push_back(agg.root);
    out.subgraph_attn.push_back(agg.attn);
  }
  auto top = pool(concat_rows(roots), ctx, *w.graph2);
  out.root = top.root;
  out.graph_attn = top.attn;
  return out;
}

}  // namespace ctxgat
