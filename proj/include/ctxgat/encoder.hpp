#pragma once

#include "ctxgat/model.hpp"

#include <span>

namespace ctxgat {

struct PostEncoding {
  Var emb_c;          // 1 x d, the [CLS] state
  Var token_states;   // (len + 1) x d, row 0 is [CLS]
};

// `post_ids` excludes [CLS]; it is prepended here. Throws when the post is
// empty or longer than max_post_len.
PostEncoding encode_post(Tape& t, const ModelState& model, std::span<const int> post_ids);
PostEncoding encode_post(Tape& t, const ModelState& model, const TokenList& post);

// Token ids of the flattened triple [h; r; t], truncated to max_triple_len.
std::vector<int> triple_token_ids(const Triple& triple, const ModelState& model);

// Mean of the shared embedding rows of the flattened triple (1 x d).
Var embed_triple(Tape& t, const ModelState& model, const Triple& triple);
// One row per triple (N x d), equal row-wise to embed_triple.
Var embed_triples(Tape& t, const ModelState& model, std::span<const Triple> triples);

}  // namespace ctxgat
