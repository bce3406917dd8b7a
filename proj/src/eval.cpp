#include "ctxgat/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace ctxgat {

namespace {

using NgramCounts = std::map<TokenList, std::size_t>;

NgramCounts ngrams(const TokenList& s, int n) {
  NgramCounts out;
  const auto k = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + k <= s.size(); ++i) ++out[TokenList(s.begin() + static_cast<std::ptrdiff_t>(i),
                                                                 s.begin() + static_cast<std::ptrdiff_t>(i + k))];
  return out;
}

void require_order(int n, const char* what) {
  if (n < 1 || n > 4) throw std::invalid_argument(std::string(what) + ": n must be in [1,4], got " + std::to_string(n));
}

void require_aligned(const Corpus& h, const Corpus& r, const char* what) {
  if (h.empty()) throw std::invalid_argument(std::string(what) + ": empty corpus");
  if (h.size() != r.size())
    throw std::invalid_argument(std::string(what) + ": " + std::to_string(h.size()) + " hypotheses vs " +
                                std::to_string(r.size()) + " references");
}

std::size_t total_length(const Corpus& c) {
  std::size_t n = 0;
  for (const auto& s : c) n += s.size();
  return n;
}

}  // namespace

double ppl(const ModelState& model, std::span<const PreparedExample> corpus) { return corpus_nll(model, corpus).ppl(); }

double bleu_n(const Corpus& hypotheses, const Corpus& references, int n) {
  require_order(n, "bleu_n");
  require_aligned(hypotheses, references, "bleu_n");
  double log_sum = 0.0;
  for (int k = 1; k <= n; ++k) {
    std::size_t match = 0, total = 0;
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
      const auto h = ngrams(hypotheses[i], k);
      const auto r = ngrams(references[i], k);
      for (const auto& [g, c] : h) {
        total += c;
        if (auto it = r.find(g); it != r.end()) match += std::min(c, it->second);
      }
    }
    double p;
    if (match == 0) {
      if (k == 1) return 0.0;
      p = 1.0 / static_cast<double>(total + 1);
    } else {
      p = static_cast<double>(match) / static_cast<double>(total);
    }
    log_sum += std::log(p);
  }
  const auto c = static_cast<double>(total_length(hypotheses));
  const auto r = static_cast<double>(total_length(references));
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / n);
}

double nist_n(const Corpus& hypotheses, const Corpus& references, int n) {
  require_order(n, "nist_n");
  require_aligned(hypotheses, references, "nist_n");
  // Reference n-gram counts for every order up to n; the empty prefix counts all words.
  std::vector<NgramCounts> ref_counts(static_cast<std::size_t>(n) + 1);
  for (const auto& s : references)
    for (int k = 1; k <= n; ++k)
      for (const auto& [g, c] : ngrams(s, k)) ref_counts[static_cast<std::size_t>(k)][g] += c;
  const auto ref_words = static_cast<double>(total_length(references));
  auto info = [&](const TokenList& g) {
    const double num = g.size() == 1 ? ref_words : static_cast<double>(ref_counts[g.size() - 1].at(TokenList(g.begin(), g.end() - 1)));
    return std::log2(num / static_cast<double>(ref_counts[g.size()].at(g)));
  };

  double score = 0.0;
  for (int k = 1; k <= n; ++k) {
    double weighted = 0.0;
    std::size_t total = 0;
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
      const auto h = ngrams(hypotheses[i], k);
      const auto r = ngrams(references[i], k);
      for (const auto& [g, c] : h) {
        total += c;
        if (auto it = r.find(g); it != r.end()) weighted += info(g) * static_cast<double>(std::min(c, it->second));
      }
    }
    if (total > 0) score += weighted / static_cast<double>(total);
  }
  const double hyp_len = static_cast<double>(total_length(hypotheses));
  const double ratio = std::min(hyp_len / ref_words, 1.0);
  if (ratio <= 0.0) return 0.0;
  const double beta = std::log(0.5) / std::pow(std::log(1.5), 2);
  return score * std::exp(beta * std::pow(std::log(ratio), 2));
}

double meteor_lite(const TokenList& hyp, const TokenList& ref) {
  // Greedy exact alignment: each hypothesis token takes the first unused equal reference token.
  std::vector<bool> used(ref.size(), false);
  std::vector<std::pair<std::size_t, std::size_t>> align;
  for (std::size_t i = 0; i < hyp.size(); ++i)
    for (std::size_t j = 0; j < ref.size(); ++j)
      if (!used[j] && ref[j] == hyp[i]) {
        used[j] = true;
        align.emplace_back(i, j);
        break;
      }
  if (align.empty()) return 0.0;
  const auto m = static_cast<double>(align.size());
  std::size_t chunks = 1;
  for (std::size_t a = 1; a < align.size(); ++a)
    if (align[a].first != align[a - 1].first + 1 || align[a].second != align[a - 1].second + 1) ++chunks;
  const double p = m / static_cast<double>(hyp.size());
  const double r = m / static_cast<double>(ref.size());
  const double fmean = 10.0 * p * r / (r + 9.0 * p);
  const double penalty = 0.5 * std::pow(static_cast<double>(chunks) / m, 3);
  return fmean * (1.0 - penalty);
}

double meteor_lite(const Corpus& hypotheses, const Corpus& references) {
  require_aligned(hypotheses, references, "meteor_lite");
  double s = 0.0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) s += meteor_lite(hypotheses[i], references[i]);
  return s / static_cast<double>(hypotheses.size());
}

double dist_n(const Corpus& hypotheses, int n) {
  if (hypotheses.empty()) throw std::invalid_argument("dist_n: empty corpus");
  if (n < 1) throw std::invalid_argument("dist_n: n must be >= 1");
  NgramCounts all;
  std::size_t total = 0;
  for (const auto& s : hypotheses)
    for (const auto& [g, c] : ngrams(s, n)) {
      all[g] += c;
      total += c;
    }
  return total == 0 ? 0.0 : static_cast<double>(all.size()) / static_cast<double>(total);
}

double ent_n(const Corpus& hypotheses, int n) {
  if (hypotheses.empty()) throw std::invalid_argument("ent_n: empty corpus");
  if (n < 1) throw std::invalid_argument("ent_n: n must be >= 1");
  NgramCounts all;
  std::size_t total = 0;
  for (const auto& s : hypotheses)
    for (const auto& [g, c] : ngrams(s, n)) {
      all[g] += c;
      total += c;
    }
  double h = 0.0;
  for (const auto& [g, c] : all) {
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log(p);
  }
  return h;
}

double entity_score(const Corpus& hypotheses, const std::set<std::string, std::less<>>& entities) {
  if (hypotheses.empty()) throw std::invalid_argument("entity_score: empty corpus");
  std::size_t hits = 0;
  for (const auto& s : hypotheses)
    for (const auto& tok : s) {
      std::string lower = tok;
      std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
      hits += entities.count(lower);
    }
  return static_cast<double>(hits) / static_cast<double>(hypotheses.size());
}

FrequencyBuckets bucket_by_frequency(const std::vector<DialogueExample>& test,
                                     const std::vector<DialogueExample>& train, const KnowledgeBase& kb,
                                     const StopWords& stopwords) {
  std::map<std::string, std::size_t> freq;
  for (const auto& e : train)
    for (const auto& ent : match_entities(e.post, kb, stopwords)) ++freq[ent];

  FrequencyBuckets b;
  std::vector<double> nonzero;
  for (const auto& e : test) {
    const auto ents = match_entities(e.post, kb, stopwords);
    double s = 0.0;
    for (const auto& ent : ents)
      if (auto it = freq.find(ent); it != freq.end()) s += static_cast<double>(it->second);
    if (!ents.empty()) s /= static_cast<double>(ents.size());
    b.statistic.push_back(s);
    if (s > 0.0) nonzero.push_back(s);
  }
  std::sort(nonzero.begin(), nonzero.end());
  if (!nonzero.empty()) {
    b.lower = nonzero[nonzero.size() / 3];
    b.upper = nonzero[2 * nonzero.size() / 3];
  }
  for (std::size_t i = 0; i < test.size(); ++i) {
    const double s = b.statistic[i];
    if (s == 0.0)
      b.oov.push_back(i);
    else if (s < b.lower)
      b.low.push_back(i);
    else if (s < b.upper)
      b.medium.push_back(i);
    else
      b.high.push_back(i);
  }
  return b;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j = {{"examples", examples},         {"ppl", ppl},   {"bleu", bleu},
                      {"nist", nist},                 {"meteor_lite", meteor_lite},
                      {"dist", dist},                 {"ent4", ent4}, {"entity_score", entity_score}};
  if (!buckets.empty()) {
    nlohmann::json bj = nlohmann::json::object();
    for (const auto& [name, r] : buckets) bj[name] = r.to_json();
    j["buckets"] = bj;
  }
  return j;
}

MetricReport metric_report(const ModelState& model, std::span<const PreparedExample> corpus,
                           const Corpus& hypotheses, const std::set<std::string, std::less<>>& entities) {
  if (corpus.empty()) throw std::invalid_argument("metric_report: empty corpus");
  Corpus refs;
  for (const auto& p : corpus) refs.push_back(p.source.response);
  MetricReport r;
  r.examples = corpus.size();
  r.ppl = ppl(model, corpus);
  for (int n = 1; n <= 4; ++n) {
    r.bleu[static_cast<std::size_t>(n - 1)] = bleu_n(hypotheses, refs, n);
    r.nist[static_cast<std::size_t>(n - 1)] = nist_n(hypotheses, refs, n);
  }
  r.meteor_lite = meteor_lite(hypotheses, refs);
  r.dist = {dist_n(hypotheses, 1), dist_n(hypotheses, 2)};
  r.ent4 = ent_n(hypotheses, 4);
  r.entity_score = entity_score(hypotheses, entities);
  return r;
}

EvaluationResult evaluate(const ModelState& model, const std::vector<PreparedExample>& corpus,
                          const std::vector<DialogueExample>& train, const KnowledgeBase& kb,
                          const StopWords& stopwords, const DecodeOptions& options) {
  EvaluationResult out;
  Corpus hyps;
  for (const auto& p : corpus) {
    out.responses.push_back(respond(model, p, options));
    hyps.push_back(out.responses.back().tokens);
  }
  const auto names = kb.entities();
  const std::set<std::string, std::less<>> entities(names.begin(), names.end());
  out.report = metric_report(model, corpus, hyps, entities);

  std::vector<DialogueExample> sources;
  for (const auto& p : corpus) sources.push_back(p.source);
  const auto b = bucket_by_frequency(sources, train, kb, stopwords);
  const std::pair<const char*, const std::vector<std::size_t>*> parts[] = {
      {"high", &b.high}, {"medium", &b.medium}, {"low", &b.low}, {"oov", &b.oov}};
  for (const auto& [name, idx] : parts) {
    if (idx->empty()) {
      MetricReport empty;
      out.report.buckets[name] = empty;
      continue;
    }
    std::vector<PreparedExample> sub;
    Corpus sub_hyps;
    for (auto i : *idx) {
      sub.push_back(corpus[i]);
      sub_hyps.push_back(hyps[i]);
    }
    out.report.buckets[name] = metric_report(model, sub, sub_hyps, entities);
  }
  return out;
}

std::vector<AttentionRow> attention_rows(const std::vector<PreparedExample>& corpus,
                                         const std::vector<Response>& responses, bool two_hop) {
  if (corpus.size() != responses.size())
    throw std::invalid_argument("attention_rows: corpus and responses differ in length");
  std::vector<AttentionRow> rows;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& golden = two_hop ? corpus[i].source.two_hop_golden : corpus[i].source.golden;
    const auto& resp = responses[i];
    const auto& groups = two_hop ? resp.trace.two_hop_subgraphs : resp.trace.subgraphs;
    const auto& knowledge = two_hop ? resp.knowledge.two_hop.value_or(std::vector<SubGraph>{}) : resp.knowledge.one_hop;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      for (std::size_t j = 0; j < groups[g].triple_ids.size(); ++j) {
        const Triple& t = knowledge.at(g).triples.at(j);
        std::string tag = "other";
        if (std::any_of(golden.begin(), golden.end(), [&](const Triple& x) { return x.same_fact(t); })) {
          tag = "golden";
        } else if (std::find(resp.tokens.begin(), resp.tokens.end(), t.head) != resp.tokens.end() ||
                   std::find(resp.tokens.begin(), resp.tokens.end(), t.tail) != resp.tokens.end()) {
          tag = "output";
        }
        rows.push_back({i, groups[g].triple_ids[j], groups[g].weights[j], tag});
      }
    }
  }
  return rows;
}

AttentionSummary summarize_attention(const std::vector<AttentionRow>& rows) {
  AttentionSummary s;
  std::map<std::string, double> sums;
  for (const char* tag : {"golden", "output", "other", "overall"}) {
    sums[tag] = 0.0;
    s.count[tag] = 0;
  }
  for (const auto& r : rows) {
    sums[r.tag] += r.weight;
    ++s.count[r.tag];
    sums["overall"] += r.weight;
    ++s.count["overall"];
  }
  for (const auto& [tag, total] : sums)
    s.mean[tag] = s.count[tag] == 0 ? 0.0 : total / static_cast<double>(s.count[tag]);
  return s;
}

nlohmann::json AttentionSummary::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [tag, m] : mean) j[tag] = {{"mean", m}, {"count", count.at(tag)}};
  return j;
}

std::string attention_csv(const std::vector<AttentionRow>& rows) {
  std::ostringstream out;
  out << "example_id,triple_id,weight,tag\n" << std::setprecision(17);
  for (const auto& r : rows) out << r.example_id << ',' << r.triple_id << ',' << r.weight << ',' << r.tag << '\n';
  return out.str();
}

}  // namespace ctxgat
