#pragma once

// Architecture configuration, the parameter set that realizes it, and the
// transformer building blocks shared by the encoder and decoder.

#include "ctxgat/numerics.hpp"
#include "ctxgat/text.hpp"

#include <json.hpp>

#include <string>

namespace ctxgat {

enum class GatScore {
  // beta = v . tanh(W [node; context...]); W is d x (k*d), v is 1 x d.
  kAdditive,
  // beta = w [node; context...]^T with a single 1 x (k*d) row.
  kLinear,
};

std::string to_string(GatScore s);
GatScore gat_score_from_string(const std::string& s);

struct ModelConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int ffn_mult = 4;
  int vocab_size = 0;
  int max_post_len = 64;
  int max_response_len = 32;
  int max_triple_len = 8;
  // Knowledge path on/off; off means the decoder memory is the post alone.
  bool ca_gat = true;
  // Replace both attention layers with plain means over triple embeddings.
  bool mean_pool_aggregation = false;
  bool two_hop = false;
  GatScore gat_score = GatScore::kAdditive;

  void validate() const;
  int head_dim() const { return d_model / n_heads; }
  // Rows of the largest decoder memory: two roots, [CLS], post tokens.
  int max_memory_rows() const { return 2 + max_post_len + 1; }

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ModelState {
  ModelConfig config;
  Vocab vocab;
  ParamStore params;

  // Fresh parameters for `config` (vocab_size is taken from `vocab`).
  static ModelState create(ModelConfig config, Vocab vocab, std::uint64_t seed);
};

namespace layers {

// Pre-norm building blocks over parameters under `prefix`.
Var linear(Tape& t, Var x, const std::string& weight);
Var layer_norm(Tape& t, Var x, const std::string& prefix);
Var feed_forward(Tape& t, Var x, const std::string& prefix);
// Multi-head attention; queries from `q_in`, keys/values from `kv_in`.
Var attention(Tape& t, Var q_in, Var kv_in, const std::string& prefix, int n_heads, bool causal);
// Attention against precomputed key/value projections.
Var attention_kv(Tape& t, Var q_in, Var keys, Var values, const std::string& prefix, int n_heads,
                 bool causal);

}  // namespace layers

}  // namespace ctxgat
