#include "helpers.hpp"

#include <doctest.h>

#include <numeric>

using namespace ctxgat;
using testing::max_abs_diff;

namespace {

ModelState random_model(std::uint64_t seed, bool two_hop = false) {
  TokenList words;
  for (int i = 0; i < 30; ++i) words.push_back("w" + std::to_string(i));
  auto cfg = testing::tiny_config();
  cfg.two_hop = two_hop;
  return ModelState::create(cfg, Vocab::build({words}), seed);
}

TokenList random_post(Rng& rng, std::size_t len) {
  TokenList p;
  for (std::size_t i = 0; i < len; ++i) p.push_back("w" + std::to_string(rng.below(30)));
  return p;
}

std::vector<double> softmax_row(const Var& logits, std::size_t r) {
  const std::size_t k = logits.cols();
  std::vector<double> row(logits.value().begin() + static_cast<std::ptrdiff_t>(r * k),
                          logits.value().begin() + static_cast<std::ptrdiff_t>((r + 1) * k));
  return softmax(row);
}

}  // namespace

TEST_CASE("memory layout") {
  auto m = random_model(1, true);
  Tape t(&m.params, false);
  auto post = encode_post(t, m, TokenList{"w1", "w2", "w3", "w4", "w5"});
  Var r1 = t.constant(1, 8, std::vector<double>(8, 0.5));
  Var r2 = t.constant(1, 8, std::vector<double>(8, -0.5));
  auto one = build_memory(t, m, r1, std::nullopt, post);
  CHECK(one.rows.rows() == 7);
  CHECK(one.n_roots == 1);
  CHECK(slice_rows(one.rows, 0, 1).value() == r1.value());
  CHECK(slice_rows(one.rows, 1, 6).value() == post.token_states.value());
  auto both = build_memory(t, m, r1, r2, post);
  CHECK(both.rows.rows() == 8);
  CHECK(slice_rows(both.rows, 1, 1).value() == r2.value());
  auto null = build_memory(t, m, std::nullopt, std::nullopt, post);
  CHECK(null.rows.rows() == 7);
  CHECK(slice_rows(null.rows, 0, 1).value() == m.params.at("null_root").data);
  CHECK_THROWS(build_memory(t, m, std::nullopt, r2, post));
}

TEST_CASE("memory without the knowledge path holds only the post") {
  auto cfg = testing::tiny_config();
  cfg.ca_gat = false;
  auto m = ModelState::create(cfg, Vocab::build({{"a", "b"}}), 2);
  Tape t(&m.params, false);
  auto post = encode_post(t, m, TokenList{"a", "b"});
  auto mem = build_memory(t, m, std::nullopt, std::nullopt, post);
  CHECK(mem.rows.rows() == 3);
  CHECK(mem.n_roots == 0);
}

TEST_CASE("untrained cross-entropy is close to log vocabulary size") {
  auto m = random_model(4);
  Rng rng(8);
  const double k = static_cast<double>(m.vocab.size());
  double total = 0;
  std::size_t n = 0;
  for (int batch = 0; batch < 100; ++batch) {
    Tape t(&m.params, false);
    auto post = encode_post(t, m, random_post(rng, 1 + rng.below(6)));
    auto mem = build_memory(t, m, t.constant(1, 8, testing::random_values(rng, 8)), std::nullopt, post);
    std::vector<int> prefix{special::kBos};
    std::vector<int> targets;
    for (std::size_t i = 0; i < 8; ++i) {
      const int tok = special::kCount + static_cast<int>(rng.below(m.vocab.size() - special::kCount));
      targets.push_back(tok);
      if (i + 1 < 8) prefix.push_back(tok);
    }
    total += nll_rows(decode_forward(t, m, mem, prefix), targets).item();
    n += targets.size();
  }
  CHECK(total / static_cast<double>(n) == doctest::Approx(std::log(k)).epsilon(0.05));
}

TEST_CASE("decoder logits are causal and normalized") {
  auto m = random_model(5);
  Tape t(&m.params, false);
  auto post = encode_post(t, m, TokenList{"w3", "w9"});
  auto mem = build_memory(t, m, std::nullopt, std::nullopt, post);
  std::vector<int> a{special::kBos, 10, 11, 12, 13};
  std::vector<int> b{special::kBos, 10, 11, 20, 21};
  auto la = decode_forward(t, m, mem, a);
  auto lb = decode_forward(t, m, mem, b);
  CHECK(la.rows() == 5);
  CHECK(la.cols() == m.vocab.size());
  for (std::size_t r = 0; r < 3; ++r) CHECK(max_abs_diff(softmax_row(la, r), softmax_row(lb, r)) == 0.0);
  CHECK(max_abs_diff(softmax_row(la, 3), softmax_row(lb, 3)) > 1e-9);
  for (std::size_t r = 0; r < 5; ++r) {
    auto p = softmax_row(la, r);
    CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) < 1e-9);
  }
  CHECK_THROWS(decode_forward(t, m, mem, std::vector<int>{10, 11}));
  CHECK_THROWS(decode_forward(t, m, mem, std::vector<int>(18, special::kBos)));
}

TEST_CASE("decoder reads its memory and the root position is distinguished") {
  auto m = random_model(6);
  Tape t(&m.params, false);
  auto post = encode_post(t, m, TokenList{"w1", "w2", "w3"});
  Var root = t.constant(1, 8, {0.3, -0.2, 0.9, 0.1, -0.7, 0.4, 0.2, -0.1});
  auto mem = build_memory(t, m, root, std::nullopt, post);
  std::vector<int> prefix{special::kBos, 12, 14};
  auto base = decode_forward(t, m, mem, prefix).value();

  DecoderMemory zeroed = mem;
  zeroed.rows = t.constant(mem.rows.rows(), 8, std::vector<double>(mem.rows.numel(), 0.0));
  CHECK(max_abs_diff(decode_forward(t, m, zeroed, prefix).value(), base) > 1e-6);

  DecoderMemory swapped = mem;
  const Var parts[] = {slice_rows(mem.rows, 2, 1), slice_rows(mem.rows, 1, 1), slice_rows(mem.rows, 0, 1),
                       slice_rows(mem.rows, 3, 2)};
  swapped.rows = concat_rows(parts);
  CHECK(max_abs_diff(decode_forward(t, m, swapped, prefix).value(), base) > 1e-6);
}

TEST_CASE("beam of one equals greedy and banned tokens never appear") {
  Rng rng(9);
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    auto m = random_model(seed);
    Tape t(&m.params, false);
    auto post = encode_post(t, m, random_post(rng, 1 + rng.below(8)));
    auto mem = build_memory(t, m, t.constant(1, 8, testing::random_values(rng, 8)), std::nullopt, post);
    DecodeOptions greedy{12, 1};
    auto g = generate(t, m, mem, greedy);
    auto b = beam_search(t, m, prepare_memory(t, m, mem), 1, 12);
    CHECK(g == b);
    auto wide = generate(t, m, mem, DecodeOptions{12, 3});
    CHECK(g.size() <= 12);
    for (const auto* out : {&g, &wide})
      for (int id : *out) {
        CHECK(id != special::kPad);
        CHECK(id != special::kBos);
        CHECK(id != special::kCls);
        CHECK(id != special::kSep);
        CHECK(id != special::kEos);
      }
  }
}
