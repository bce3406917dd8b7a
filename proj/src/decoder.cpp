#include "ctxgat/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ctxgat {

DecoderMemory build_memory(Tape& t, const ModelState& model, std::optional<Var> rt_one,
                           std::optional<Var> rt_two, const PostEncoding& post) {
  if (rt_two && !rt_one) throw std::invalid_argument("build_memory: two-hop root without one-hop root");
  std::vector<Var> rows;
  if (model.config.ca_gat) rows.push_back(rt_one ? *rt_one : t.param("null_root"));
  if (rt_two) rows.push_back(*rt_two);
  const int n_roots = static_cast<int>(rows.size());
  rows.push_back(post.token_states);
  return DecoderMemory{concat_rows(rows), n_roots};
}

DecoderContext prepare_memory(Tape& t, const ModelState& model, const DecoderMemory& memory) {
  const auto m = memory.rows.rows();
  if (m > static_cast<std::size_t>(model.config.max_memory_rows()))
    throw std::invalid_argument("decoder memory of " + std::to_string(m) + " rows exceeds the maximum " +
                                std::to_string(model.config.max_memory_rows()));
  Var mem = add(layers::layer_norm(t, memory.rows, "dec.ln_mem"), slice_rows(t.param("dec.mem_pos"), 0, m));
  DecoderContext ctx;
  for (int l = 0; l < model.config.n_layers; ++l) {
    const std::string pre = "dec." + std::to_string(l) + ".cross";
    ctx.keys.push_back(matmul(mem, t.param(pre + ".k")));
    ctx.values.push_back(matmul(mem, t.param(pre + ".v")));
  }
  return ctx;
}

Var decode_forward(Tape& t, const ModelState& model, const DecoderContext& ctx, std::span<const int> prefix) {
  const auto& cfg = model.config;
  if (prefix.empty() || prefix[0] != special::kBos)
    throw std::invalid_argument("decode_forward: prefix must start with [BOS]");
  if (prefix.size() > static_cast<std::size_t>(cfg.max_response_len) + 1)
    throw std::invalid_argument("decode_forward: prefix of " + std::to_string(prefix.size()) +
                                " tokens exceeds max_response_len + 1");
  Var x = add(embedding(t.param("embed.token"), prefix), slice_rows(t.param("dec.pos"), 0, prefix.size()));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = "dec." + std::to_string(l);
    Var h = layers::layer_norm(t, x, pre + ".ln1");
    x = add(x, layers::attention(t, h, h, pre + ".self", cfg.n_heads, true));
    h = layers::layer_norm(t, x, pre + ".ln2");
    x = add(x, layers::attention_kv(t, h, ctx.keys[static_cast<std::size_t>(l)],
                                    ctx.values[static_cast<std::size_t>(l)], pre + ".cross", cfg.n_heads,
                                    false));
    h = layers::layer_norm(t, x, pre + ".ln3");
    x = add(x, layers::feed_forward(t, h, pre + ".ffn"));
  }
  return matmul(layers::layer_norm(t, x, "dec.ln_f"), t.param("out.w"));
}

Var decode_forward(Tape& t, const ModelState& model, const DecoderMemory& memory, std::span<const int> prefix) {
  return decode_forward(t, model, prepare_memory(t, model, memory), prefix);
}

namespace {

bool banned(int id) {
  return id == special::kPad || id == special::kCls || id == special::kSep || id == special::kBos;
}

std::vector<double> next_log_probs(Tape& t, const ModelState& model, const DecoderContext& ctx,
                                   const std::vector<int>& generated) {
  std::vector<int> prefix{special::kBos};
  prefix.insert(prefix.end(), generated.begin(), generated.end());
  Var logits = decode_forward(t, model, ctx, prefix);
  const std::size_t v = logits.cols();
  const auto& all = logits.value();
  std::vector<double> last(all.end() - static_cast<std::ptrdiff_t>(v), all.end());
  for (std::size_t i = 0; i < v; ++i)
    if (banned(static_cast<int>(i))) last[i] = -std::numeric_limits<double>::infinity();
  return log_softmax(last);
}

struct Hypothesis {
  std::vector<int> tokens;
  double logp = 0.0;
  std::size_t length = 0;  // scored length, counts [EOS] when present
  double score() const { return logp / static_cast<double>(std::max<std::size_t>(length, 1)); }
};

}  // namespace

std::vector<int> generate(Tape& t, const ModelState& model, const DecoderMemory& memory,
                          const DecodeOptions& options) {
  const int max_len = std::min(options.max_len, model.config.max_response_len);
  if (max_len < 1) throw std::invalid_argument("generate: max_len must be >= 1");
  const DecoderContext ctx = prepare_memory(t, model, memory);

  if (options.beam > 1) return beam_search(t, model, ctx, options.beam, max_len);
  std::vector<int> out;
  while (static_cast<int>(out.size()) < max_len) {
    const auto lp = next_log_probs(t, model, ctx, out);
    // max_element keeps the first maximum, i.e. the lowest id on ties.
    const int best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    if (best == special::kEos) break;
    out.push_back(best);
  }
  return out;
}

std::vector<int> beam_search(Tape& t, const ModelState& model, const DecoderContext& ctx, int width, int max_len) {
  if (width < 1 || max_len < 1) throw std::invalid_argument("beam_search: width and max_len must be >= 1");
  const auto beam = static_cast<std::size_t>(width);
  std::vector<Hypothesis> alive{Hypothesis{}};
  std::vector<Hypothesis> finished;
  while (!alive.empty() && finished.size() < beam) {
    struct Candidate {
      double score;
      std::size_t parent;
      int token;
      double logp;
    };
    std::vector<Candidate> cands;
    for (std::size_t p = 0; p < alive.size(); ++p) {
      const auto lp = next_log_probs(t, model, ctx, alive[p].tokens);
      const double len = static_cast<double>(alive[p].tokens.size() + 1);
      for (std::size_t tok = 0; tok < lp.size(); ++tok) {
        if (banned(static_cast<int>(tok))) continue;
        const double logp = alive[p].logp + lp[tok];
        cands.push_back({logp / len, p, static_cast<int>(tok), logp});
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.parent != b.parent) return a.parent < b.parent;
      return a.token < b.token;
    });
    std::vector<Hypothesis> next;
    for (const auto& c : cands) {
      if (next.size() + finished.size() >= beam) break;
      Hypothesis h = alive[c.parent];
      h.logp = c.logp;
      h.length = h.tokens.size() + 1;
      if (c.token == special::kEos) {
        finished.push_back(std::move(h));
        continue;
      }
      h.tokens.push_back(c.token);
      if (static_cast<int>(h.tokens.size()) >= max_len) {
        finished.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    alive = std::move(next);
  }
  const auto& pool = finished.empty() ? alive : finished;
  const auto best = std::max_element(pool.begin(), pool.end(), [](const Hypothesis& a, const Hypothesis& b) {
    return a.score() < b.score();
  });
  return best->tokens;
}

}  // namespace ctxgat
