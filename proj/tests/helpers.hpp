#pragma once

#include "ctxgat/eval.hpp"

#include <cmath>
#include <vector>

namespace testing {

using namespace ctxgat;

inline std::vector<double> random_values(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : INFINITY;
}

inline ModelConfig tiny_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.ffn_mult = 2;
  c.max_post_len = 24;
  c.max_response_len = 16;
  return c;
}

struct Fixture {
  SynthCorpus corpus;
  ModelState model;
  Retriever retriever;
  std::vector<PreparedExample> train;
  std::vector<PreparedExample> valid;
};

inline Fixture make_fixture(ModelConfig config, int n_examples = 60, std::uint64_t seed = 11) {
  SynthConfig sc;
  sc.seed = seed;
  sc.n_examples = n_examples;
  auto corpus = synth_corpus(sc);
  auto model = ModelState::create(config, build_vocab(corpus.train, corpus.kb), seed);
  Fixture f{std::move(corpus), std::move(model), {}, {}, {}};
  f.retriever = make_retriever(f.corpus.kb, f.corpus.stopwords, f.model.config, f.corpus.train);
  f.train = prepare_all(f.corpus.train, f.model, f.retriever);
  f.valid = prepare_all(f.corpus.valid, f.model, f.retriever);
  return f;
}

// Examples with one-hop knowledge and, when asked, non-empty two-hop knowledge.
inline std::vector<PreparedExample> knowledge_batch(const std::vector<PreparedExample>& pool, std::size_t n,
                                                    bool need_two_hop = false) {
  std::vector<PreparedExample> out;
  for (const auto& p : pool) {
    if (out.size() == n) break;
    if (p.knowledge.one_hop.empty() || p.source.golden.empty()) continue;
    if (need_two_hop && (!p.knowledge.two_hop || p.knowledge.two_hop->empty())) continue;
    out.push_back(p);
  }
  return out;
}

}  // namespace testing
