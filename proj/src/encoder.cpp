#include "ctxgat/encoder.hpp"

namespace ctxgat {

PostEncoding encode_post(Tape& t, const ModelState& model, std::span<const int> post_ids) {
  const auto& cfg = model.config;
  if (post_ids.empty()) throw std::invalid_argument("encode_post: empty post");
  if (post_ids.size() > static_cast<std::size_t>(cfg.max_post_len))
    throw std::invalid_argument("encode_post: post of " + std::to_string(post_ids.size()) +
                                " tokens exceeds max_post_len " + std::to_string(cfg.max_post_len));
  std::vector<int> ids;
  ids.reserve(post_ids.size() + 1);
  ids.push_back(special::kCls);
  ids.insert(ids.end(), post_ids.begin(), post_ids.end());

  Var x = add(embedding(t.param("embed.token"), ids), slice_rows(t.param("enc.pos"), 0, ids.size()));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = "enc." + std::to_string(l);
    Var h = layers::layer_norm(t, x, pre + ".ln1");
    x = add(x, layers::attention(t, h, h, pre + ".attn", cfg.n_heads, false));
    h = layers::layer_norm(t, x, pre + ".ln2");
    x = add(x, layers::feed_forward(t, h, pre + ".ffn"));
  }
  return PostEncoding{slice_rows(x, 0, 1), x};
}

PostEncoding encode_post(Tape& t, const ModelState& model, const TokenList& post) {
  const auto ids = model.vocab.encode(post);
  return encode_post(t, model, std::span<const int>(ids));
}

std::vector<int> triple_token_ids(const Triple& triple, const ModelState& model) {
  auto ids = model.vocab.encode(triple_tokens(triple));
  if (ids.size() > static_cast<std::size_t>(model.config.max_triple_len))
    ids.resize(static_cast<std::size_t>(model.config.max_triple_len));
  if (ids.empty()) ids.push_back(special::kUnk);
  return ids;
}

Var embed_triple(Tape& t, const ModelState& model, const Triple& triple) {
  const auto ids = triple_token_ids(triple, model);
  return mean_rows(embedding(t.param("embed.token"), ids));
}

Var embed_triples(Tape& t, const ModelState& model, std::span<const Triple> triples) {
  if (triples.empty()) throw std::invalid_argument("embed_triples: no triples");
  std::vector<int> all;
  std::vector<std::size_t> lens;
  for (const auto& tr : triples) {
    auto ids = triple_token_ids(tr, model);
    lens.push_back(ids.size());
    all.insert(all.end(), ids.begin(), ids.end());
  }
  // Row i of the pooling matrix averages triple i's token rows.
  std::vector<double> pool(triples.size() * all.size(), 0.0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < lens.size(); ++i) {
    for (std::size_t j = 0; j < lens[i]; ++j)
      pool[i * all.size() + off + j] = 1.0 / static_cast<double>(lens[i]);
    off += lens[i];
  }
  Var p = t.constant(triples.size(), all.size(), std::move(pool));
  return matmul(p, embedding(t.param("embed.token"), all));
}

}  // namespace ctxgat
