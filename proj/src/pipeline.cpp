#include "ctxgat/pipeline.hpp"

#include <algorithm>

namespace ctxgat {

EntityLabels entity_labels(const RetrievedKnowledge& retrieved, const std::vector<Triple>& golden) {
  auto is_golden = [&](const Triple& t) {
    return std::any_of(golden.begin(), golden.end(), [&](const Triple& g) { return g.same_fact(t); });
  };
  EntityLabels out;
  for (const auto& g : retrieved.one_hop) {
    std::vector<int> row;
    int any = 0;
    for (const auto& t : g.triples) {
      row.push_back(is_golden(t) ? 1 : 0);
      any |= row.back();
    }
    out.triples.push_back(std::move(row));
    out.subgraphs.push_back(any);
  }
  return out;
}

PreparedExample prepare(const DialogueExample& example, const ModelState& model, const Retriever& retriever) {
  PreparedExample p;
  p.source = example;
  p.post_ids = model.vocab.encode(example.post);
  if (p.post_ids.size() > static_cast<std::size_t>(model.config.max_post_len))
    p.post_ids.resize(static_cast<std::size_t>(model.config.max_post_len));
  p.response_ids = model.vocab.encode(example.response);
  if (p.response_ids.size() > static_cast<std::size_t>(model.config.max_response_len))
    p.response_ids.resize(static_cast<std::size_t>(model.config.max_response_len));
  p.knowledge = retriever.retrieve(example.post);
  p.labels = entity_labels(p.knowledge, example.golden);
  return p;
}

std::vector<PreparedExample> prepare_all(const std::vector<DialogueExample>& examples, const ModelState& model,
                                         const Retriever& retriever) {
  std::vector<PreparedExample> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(prepare(e, model, retriever));
  return out;
}

namespace {

Aggregate mean_pool(Tape& t, Var nodes) {
  const std::size_t n = nodes.rows();
  return Aggregate{mean_rows(nodes), t.constant(1, n, std::vector<double>(n, 1.0 / static_cast<double>(n)))};
}

std::vector<Triple> flatten(const std::vector<SubGraph>& groups) {
  std::vector<Triple> out;
  for (const auto& g : groups) out.insert(out.end(), g.triples.begin(), g.triples.end());
  return out;
}

}  // namespace

KnowledgeForward forward_knowledge(Tape& t, const ModelState& model, std::span<const int> post_ids,
                                   const RetrievedKnowledge& knowledge) {
  const auto& cfg = model.config;
  KnowledgeForward f;
  f.post = encode_post(t, model, post_ids);
  if (!cfg.ca_gat) {
    f.memory = build_memory(t, model, std::nullopt, std::nullopt, f.post);
    return f;
  }

  const bool mean = cfg.mean_pool_aggregation;
  std::optional<GatWeights> w;
  if (!mean) w = gat_weights(t, model);

  std::optional<Var> rt_one;
  if (!knowledge.one_hop.empty()) {
    const auto all = flatten(knowledge.one_hop);
    Var embs = embed_triples(t, model, all);
    f.triple_embs = embs;
    std::vector<Var> roots;
    std::size_t off = 0;
    for (const auto& g : knowledge.one_hop) {
      Var rows = slice_rows(embs, off, g.triples.size());
      off += g.triples.size();
      auto agg = mean ? mean_pool(t, rows) : aggregate_subgraph(rows, f.post.emb_c, *w);
      roots.push_back(agg.root);
      f.sub_attn.push_back(agg.attn);
    }
    f.sub_roots = concat_rows(roots);
    auto top = mean ? mean_pool(t, *f.sub_roots) : aggregate_graph(*f.sub_roots, f.post.emb_c, *w);
    f.graph_attn = top.attn;
    rt_one = top.root;
  }

  std::optional<Var> rt_two;
  if (cfg.two_hop) {
    if (rt_one && knowledge.two_hop && !knowledge.two_hop->empty()) {
      const auto& groups = *knowledge.two_hop;
      Var embs = embed_triples(t, model, flatten(groups));
      std::vector<Var> parts;
      std::size_t off = 0;
      for (const auto& g : groups) {
        parts.push_back(slice_rows(embs, off, g.triples.size()));
        off += g.triples.size();
      }
      if (mean) {
        TwoHopAggregate agg;
        std::vector<Var> roots;
        for (Var p : parts) {
          auto a = mean_pool(t, p);
          roots.push_back(a.root);
          agg.subgraph_attn.push_back(a.attn);
        }
        auto top = mean_pool(t, concat_rows(roots));
        agg.root = top.root;
        agg.graph_attn = top.attn;
        f.two_hop = agg;
      } else {
        f.two_hop = aggregate_two_hop(parts, *rt_one, f.post.emb_c, *w);
      }
      rt_two = f.two_hop->root;
    } else {
      rt_two = t.param("null_root2");
    }
    if (!rt_one) rt_one = t.param("null_root");
  }
  f.memory = build_memory(t, model, rt_one, rt_two, f.post);
  return f;
}

AttentionTrace attention_trace(const KnowledgeForward& fwd, const RetrievedKnowledge& knowledge) {
  AttentionTrace tr;
  auto groups = [](const std::vector<SubGraph>& gs, const std::vector<Var>& attn) {
    std::vector<AttentionTrace::Group> out;
    for (std::size_t i = 0; i < gs.size() && i < attn.size(); ++i) {
      AttentionTrace::Group g;
      g.anchor = gs[i].anchor;
      for (const auto& t : gs[i].triples) g.triple_ids.push_back(t.id);
      g.weights = attn[i].value();
      out.push_back(std::move(g));
    }
    return out;
  };
  tr.subgraphs = groups(knowledge.one_hop, fwd.sub_attn);
  if (fwd.graph_attn) tr.graph_weights = fwd.graph_attn->value();
  if (fwd.two_hop && knowledge.two_hop) {
    tr.two_hop_subgraphs = groups(*knowledge.two_hop, fwd.two_hop->subgraph_attn);
    tr.two_hop_graph_weights = fwd.two_hop->graph_attn.value();
  }
  return tr;
}

Response respond(const ModelState& model, const PreparedExample& example, const DecodeOptions& options) {
  Tape t(&model.params, false);
  auto fwd = forward_knowledge(t, model, example.post_ids, example.knowledge);
  Response r;
  r.ids = generate(t, model, fwd.memory, options);
  r.tokens = model.vocab.decode(r.ids);
  r.knowledge = example.knowledge;
  r.trace = attention_trace(fwd, example.knowledge);
  return r;
}

Response respond(const ModelState& model, const Retriever& retriever, const TokenList& post,
                 const DecodeOptions& options) {
  DialogueExample e;
  e.post = post;
  e.response = {"."};
  return respond(model, prepare(e, model, retriever), options);
}

Retriever make_retriever(const KnowledgeBase& kb, const StopWords& stopwords, const ModelConfig& config,
                         const std::vector<DialogueExample>& train) {
  Retriever r;
  r.kb = &kb;
  r.stopwords = stopwords;
  r.two_hop = config.two_hop;
  std::vector<TokenList> docs;
  docs.reserve(train.size());
  for (const auto& e : train) docs.push_back(e.post);
  r.tfidf.fit(docs);
  return r;
}

}  // namespace ctxgat
