#pragma once

#include "ctxgat/training.hpp"

#include <json.hpp>

#include <array>
#include <map>

namespace ctxgat {

using Corpus = std::vector<TokenList>;

// exp of the mean per-token NLL, [EOS] counted.
double ppl(const ModelState& model, std::span<const PreparedExample> corpus);

// Corpus BLEU with brevity penalty. For orders >= 2 a zero match count is
// smoothed to (0 + 1) / (total + 1).
double bleu_n(const Corpus& hypotheses, const Corpus& references, int n);
// Information-weighted n-gram precision (weights from reference counts, log2)
// times the NIST brevity factor.
double nist_n(const Corpus& hypotheses, const Corpus& references, int n);
// Exact-token METEOR approximation, averaged over sentences.
double meteor_lite(const Corpus& hypotheses, const Corpus& references);
double meteor_lite(const TokenList& hypothesis, const TokenList& reference);
double dist_n(const Corpus& hypotheses, int n);
double ent_n(const Corpus& hypotheses, int n);
double entity_score(const Corpus& hypotheses, const std::set<std::string, std::less<>>& entities);

struct FrequencyBuckets {
  std::vector<std::size_t> high, medium, low, oov;
  double lower = 0.0;  // statistic below this -> low
  double upper = 0.0;  // statistic below this -> medium, otherwise high
  std::vector<double> statistic;  // per test example
};

// Mean training-post document frequency of each test post's matched
// entities; zero (including no matched entity) means OOV, the rest are split
// at the terciles of the statistic.
FrequencyBuckets bucket_by_frequency(const std::vector<DialogueExample>& test,
                                     const std::vector<DialogueExample>& train, const KnowledgeBase& kb,
                                     const StopWords& stopwords);

struct MetricReport {
  std::size_t examples = 0;
  double ppl = 0.0;
  std::array<double, 4> bleu{};
  std::array<double, 4> nist{};
  double meteor_lite = 0.0;
  std::array<double, 2> dist{};
  double ent4 = 0.0;
  double entity_score = 0.0;
  std::map<std::string, MetricReport> buckets;

  nlohmann::json to_json() const;
};

MetricReport metric_report(const ModelState& model, std::span<const PreparedExample> corpus,
                           const Corpus& hypotheses, const std::set<std::string, std::less<>>& entities);

struct EvaluationResult {
  MetricReport report;
  std::vector<Response> responses;
};

EvaluationResult evaluate(const ModelState& model, const std::vector<PreparedExample>& corpus,
                          const std::vector<DialogueExample>& train, const KnowledgeBase& kb,
                          const StopWords& stopwords, const DecodeOptions& options);

struct AttentionRow {
  std::size_t example_id = 0;
  int triple_id = -1;
  double weight = 0.0;
  std::string tag;  // golden | output | other
};

struct AttentionSummary {
  std::map<std::string, double> mean;  // per tag, plus "overall"
  std::map<std::string, std::size_t> count;
  nlohmann::json to_json() const;
};

// Tags: golden when the triple is annotated, output when its head or tail
// token appears in the generated response, other otherwise.
std::vector<AttentionRow> attention_rows(const std::vector<PreparedExample>& corpus,
                                         const std::vector<Response>& responses, bool two_hop);
AttentionSummary summarize_attention(const std::vector<AttentionRow>& rows);
std::string attention_csv(const std::vector<AttentionRow>& rows);

}  // namespace ctxgat
