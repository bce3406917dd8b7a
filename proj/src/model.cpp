#include "ctxgat/model.hpp"

#include <cmath>

namespace ctxgat {

std::string to_string(GatScore s) { return s == GatScore::kAdditive ? "additive" : "linear"; }

GatScore gat_score_from_string(const std::string& s) {
  if (s == "additive") return GatScore::kAdditive;
  if (s == "linear") return GatScore::kLinear;
  throw std::invalid_argument("unknown gat score \"" + s + "\" (expected additive|linear)");
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(std::string("model config: ") + msg);
  };
  require(d_model > 0 && n_layers > 0 && n_heads > 0 && ffn_mult > 0, "sizes must be positive");
  require(d_model % n_heads == 0, "d_model must be divisible by n_heads");
  require(vocab_size > special::kCount, "vocab_size must exceed the reserved tokens");
  require(max_post_len > 0 && max_response_len > 0 && max_triple_len > 0,
          "maximum lengths must be positive");
  require(!(two_hop && !ca_gat), "two_hop requires ca_gat");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"d_model", d_model},
          {"n_layers", n_layers},
          {"n_heads", n_heads},
          {"ffn_mult", ffn_mult},
          {"vocab_size", vocab_size},
          {"max_post_len", max_post_len},
          {"max_response_len", max_response_len},
          {"max_triple_len", max_triple_len},
          {"ca_gat", ca_gat},
          {"mean_pool_aggregation", mean_pool_aggregation},
          {"two_hop", two_hop},
          {"gat_score", to_string(gat_score)}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.ffn_mult = j.at("ffn_mult").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_post_len = j.at("max_post_len").get<int>();
  c.max_response_len = j.at("max_response_len").get<int>();
  c.max_triple_len = j.at("max_triple_len").get<int>();
  c.ca_gat = j.at("ca_gat").get<bool>();
  c.mean_pool_aggregation = j.at("mean_pool_aggregation").get<bool>();
  c.two_hop = j.at("two_hop").get<bool>();
  c.gat_score = gat_score_from_string(j.at("gat_score").get<std::string>());
  return c;
}

namespace {

void add_block_norm(ParamStore& p, const std::string& prefix, std::size_t d) {
  p.add_constant(prefix + ".g", {d}, 1.0);
  p.add_constant(prefix + ".b", {d}, 0.0);
}

void add_attention(ParamStore& p, const std::string& prefix, std::size_t d) {
  for (const char* m : {".q", ".k", ".v", ".o"}) p.add_uniform(prefix + m, {d, d}, d);
}

void add_ffn(ParamStore& p, const std::string& prefix, std::size_t d, std::size_t f) {
  p.add_uniform(prefix + ".w1", {d, f}, d);
  p.add_constant(prefix + ".b1", {f}, 0.0);
  p.add_uniform(prefix + ".w2", {f, d}, f);
  p.add_constant(prefix + ".b2", {d}, 0.0);
}

void add_score(ParamStore& p, const std::string& prefix, GatScore kind, std::size_t d, std::size_t arity) {
  if (kind == GatScore::kAdditive) {
    p.add_uniform(prefix + ".W", {d, arity * d}, arity * d);
    p.add_uniform(prefix + ".v", {1, d}, d);
  } else {
    p.add_uniform(prefix + ".w", {1, arity * d}, arity * d);
  }
}

}  // namespace

ModelState ModelState::create(ModelConfig config, Vocab vocab, std::uint64_t seed) {
  config.vocab_size = static_cast<int>(vocab.size());
  config.validate();
  ModelState m{config, std::move(vocab), ParamStore(seed)};
  auto& p = m.params;
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto f = d * static_cast<std::size_t>(config.ffn_mult);
  const auto v = static_cast<std::size_t>(config.vocab_size);

  p.add_uniform("embed.token", {v, d}, d);
  p.add_uniform("enc.pos", {static_cast<std::size_t>(config.max_post_len) + 1, d}, d);
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string pre = "enc." + std::to_string(l);
    add_block_norm(p, pre + ".ln1", d);
    add_attention(p, pre + ".attn", d);
    add_block_norm(p, pre + ".ln2", d);
    add_ffn(p, pre + ".ffn", d, f);
  }

  p.add_uniform("dec.pos", {static_cast<std::size_t>(config.max_response_len) + 1, d}, d);
  p.add_uniform("dec.mem_pos", {static_cast<std::size_t>(config.max_memory_rows()), d}, d);
  add_block_norm(p, "dec.ln_mem", d);
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string pre = "dec." + std::to_string(l);
    add_block_norm(p, pre + ".ln1", d);
    add_attention(p, pre + ".self", d);
    add_block_norm(p, pre + ".ln2", d);
    add_attention(p, pre + ".cross", d);
    add_block_norm(p, pre + ".ln3", d);
    add_ffn(p, pre + ".ffn", d, f);
  }
  add_block_norm(p, "dec.ln_f", d);
  p.add_uniform("out.w", {d, v}, d);

  if (config.ca_gat) {
    p.add_uniform("null_root", {1, d}, d);
    if (config.two_hop) p.add_uniform("null_root2", {1, d}, d);
    p.add_uniform("es.tau", {d, 2}, d);
    p.add_uniform("es.g", {d, 2}, d);
    if (!config.mean_pool_aggregation) {
      add_score(p, "gat.sub", config.gat_score, d, 2);
      add_score(p, "gat.graph", config.gat_score, d, 2);
      if (config.two_hop) {
        add_score(p, "gat.sub2", config.gat_score, d, 3);
        add_score(p, "gat.graph2", config.gat_score, d, 3);
      }
    }
  }
  return m;
}

namespace layers {

Var linear(Tape& t, Var x, const std::string& weight) { return matmul(x, t.param(weight)); }

Var layer_norm(Tape& t, Var x, const std::string& prefix) {
  return ctxgat::layer_norm(x, t.param(prefix + ".g"), t.param(prefix + ".b"));
}

Var feed_forward(Tape& t, Var x, const std::string& prefix) {
  Var h = gelu(add_row(matmul(x, t.param(prefix + ".w1")), t.param(prefix + ".b1")));
  return add_row(matmul(h, t.param(prefix + ".w2")), t.param(prefix + ".b2"));
}

Var attention_kv(Tape& t, Var q_in, Var keys, Var values, const std::string& prefix, int n_heads,
                 bool causal) {
  Var q = matmul(q_in, t.param(prefix + ".q"));
  const std::size_t dh = q.cols() / static_cast<std::size_t>(n_heads);
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * dh;
    Var qh = slice_cols(q, off, dh);
    Var kh = slice_cols(keys, off, dh);
    Var vh = slice_cols(values, off, dh);
    Var a = softmax_rows(scale(matmul(qh, transpose(kh)), inv), causal);
    heads.push_back(matmul(a, vh));
  }
  Var merged = n_heads == 1 ? heads[0] : concat_cols(heads);
  return matmul(merged, t.param(prefix + ".o"));
}

Var attention(Tape& t, Var q_in, Var kv_in, const std::string& prefix, int n_heads, bool causal) {
  Var k = matmul(kv_in, t.param(prefix + ".k"));
  Var v = matmul(kv_in, t.param(prefix + ".v"));
  return attention_kv(t, q_in, k, v, prefix, n_heads, causal);
}

}  // namespace layers

}  // namespace ctxgat
