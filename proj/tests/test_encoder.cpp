#include "helpers.hpp"

#include <doctest.h>

using namespace ctxgat;
using testing::max_abs_diff;

namespace {

ModelState small_model(std::uint64_t seed = 3) {
  auto vocab = Vocab::build({{"beer", "is", "a", "drink", "i", "like", "song", "music", "isa"}});
  return ModelState::create(testing::tiny_config(), vocab, seed);
}

std::vector<double> row(const Tensor& t, int r) {
  const std::size_t d = t.shape[1];
  return {t.data.begin() + static_cast<std::ptrdiff_t>(r * d), t.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * d)};
}

}  // namespace

TEST_CASE("encode_post shape and context row") {
  auto m = small_model();
  for (std::size_t len = 1; len <= 6; ++len) {
    TokenList post(len, "beer");
    Tape t(&m.params, false);
    auto enc = encode_post(t, m, post);
    CHECK(enc.token_states.rows() == len + 1);
    CHECK(enc.token_states.cols() == 8);
    CHECK(enc.emb_c.value() == slice_rows(enc.token_states, 0, 1).value());
  }
}

TEST_CASE("encode_post rejects empty and over-length posts") {
  auto m = small_model();
  Tape t(&m.params, false);
  CHECK_THROWS(encode_post(t, m, TokenList{}));
  CHECK_THROWS(encode_post(t, m, TokenList(25, "beer")));
  CHECK_NOTHROW(encode_post(t, m, TokenList(24, "beer")));
}

TEST_CASE("token order matters to the context vector") {
  auto m = small_model();
  Tape t(&m.params, false);
  auto a = encode_post(t, m, TokenList{"i", "like", "beer"});
  auto b = encode_post(t, m, TokenList{"i", "beer", "like"});
  CHECK(max_abs_diff(a.emb_c.value(), b.emb_c.value()) > 1e-6);
}

TEST_CASE("encoder is deterministic") {
  auto m = small_model();
  Tape t1(&m.params, false), t2(&m.params, false);
  auto a = encode_post(t1, m, TokenList{"i", "like", "beer"});
  auto b = encode_post(t2, m, TokenList{"i", "like", "beer"});
  CHECK(a.token_states.value() == b.token_states.value());
}

TEST_CASE("zeroed blocks reduce the encoder to embeddings plus positions") {
  auto m = small_model();
  for (auto& [name, tensor] : m.params)
    if (name.rfind("enc.0.attn", 0) == 0 || name.rfind("enc.0.ffn", 0) == 0)
      std::fill(tensor.data.begin(), tensor.data.end(), 0.0);
  const TokenList post{"i", "like", "beer"};
  Tape t(&m.params, false);
  auto enc = encode_post(t, m, post);
  std::vector<int> ids{special::kCls};
  for (const auto& tok : post) ids.push_back(m.vocab.id(tok));
  const auto& table = m.params.at("embed.token");
  const auto& pos = m.params.at("enc.pos");
  for (int i = 0; i < 4; ++i) {
    auto e = row(table, ids[static_cast<std::size_t>(i)]);
    auto p = row(pos, i);
    for (std::size_t k = 0; k < e.size(); ++k) e[k] += p[k];
    CHECK(max_abs_diff(slice_rows(enc.token_states, static_cast<std::size_t>(i), 1).value(), e) == 0.0);
  }
}

TEST_CASE("embed_triple pools the shared embedding table") {
  auto m = small_model();
  Tape t(&m.params, false);
  const Triple tr{"beer", "isa", "drink", 0};
  const auto& table = m.params.at("embed.token");
  auto e1 = row(table, m.vocab.id("beer"));
  auto e2 = row(table, m.vocab.id("isa"));
  auto e3 = row(table, m.vocab.id("drink"));
  std::vector<double> mean(e1.size());
  for (std::size_t k = 0; k < mean.size(); ++k) mean[k] = (e1[k] + e2[k] + e3[k]) / 3.0;
  CHECK(max_abs_diff(embed_triple(t, m, tr).value(), mean) < 1e-15);

  auto& tab = m.params.at("embed.token");
  const std::size_t d = tab.shape[1];
  const auto a = static_cast<std::size_t>(m.vocab.id("song"));
  const auto r = static_cast<std::size_t>(m.vocab.id("music"));
  for (std::size_t k = 0; k < d; ++k) tab.data[r * d + k] = tab.data[a * d + k];
  Tape t2(&m.params, false);
  CHECK(max_abs_diff(embed_triple(t2, m, Triple{"song", "music", "song", 0}).value(), row(tab, static_cast<int>(a))) <
        1e-15);
  CHECK(embed_triple(t2, m, Triple{"beer", "isa", "drink", 0}).value() ==
        embed_triple(t2, m, Triple{"beer", "isa", "drink", 77}).value());
  const Triple both[] = {tr, Triple{"song", "isa", "music", 1}};
  auto rows = embed_triples(t2, m, both);
  CHECK(max_abs_diff(slice_rows(rows, 1, 1).value(), embed_triple(t2, m, both[1]).value()) < 1e-15);
  CHECK(triple_token_ids(Triple{"unseenhead", "isa", "drink", 0}, m)[0] == special::kUnk);
}

TEST_CASE("the embedding table gets gradient from both losses") {
  auto f = testing::make_fixture(testing::tiny_config(), 60);
  auto batch = testing::knowledge_batch(f.train, 4);
  REQUIRE(batch.size() == 4);
  auto table_norm = [&](double l1, double l2, bool lm) {
    double sq = 0.0;
    for (const auto& ex : batch) {
      Tape t(&f.model.params, true);
      auto loss = example_loss(t, f.model, ex);
      REQUIRE(loss.es.has_value());
      Var total = lm ? loss.lm : add(scale(loss.es->tau, l1), scale(loss.es->g, l2));
      t.backward(total);
      for (double g : t.param_grads().at("embed.token")) sq += g * g;
    }
    return std::sqrt(sq);
  };
  CHECK(table_norm(0, 0, true) > 0.0);
  CHECK(table_norm(1, 0, false) > 0.0);
  CHECK(table_norm(0, 1, false) > 0.0);
}
