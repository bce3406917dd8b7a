#include "ctxgat/training.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace ctxgat {

EsLoss entity_selection_loss(Var triple_embs, Var roots, const EntityLabels& labels, Var w_tau, Var w_g) {
  std::vector<int> flat;
  for (const auto& row : labels.triples) flat.insert(flat.end(), row.begin(), row.end());
  if (flat.size() != triple_embs.rows())
    throw std::invalid_argument("entity_selection_loss: " + std::to_string(flat.size()) + " triple labels for " +
                                std::to_string(triple_embs.rows()) + " triples");
  if (labels.subgraphs.size() != roots.rows())
    throw std::invalid_argument("entity_selection_loss: " + std::to_string(labels.subgraphs.size()) +
                                " subgraph labels for " + std::to_string(roots.rows()) + " roots");
  if (flat.empty() || labels.subgraphs.empty())
    throw std::invalid_argument("entity_selection_loss: no nodes");
  Var tau = scale(nll_rows(matmul(triple_embs, w_tau), flat), 1.0 / static_cast<double>(flat.size()));
  Var g = scale(nll_rows(matmul(roots, w_g), labels.subgraphs), 1.0 / static_cast<double>(labels.subgraphs.size()));
  return EsLoss{tau, g};
}

ExampleLoss example_loss(Tape& t, const ModelState& model, const PreparedExample& example) {
  auto fwd = forward_knowledge(t, model, example.post_ids, example.knowledge);
  std::vector<int> prefix{special::kBos};
  prefix.insert(prefix.end(), example.response_ids.begin(), example.response_ids.end());
  std::vector<int> targets(example.response_ids.begin(), example.response_ids.end());
  targets.push_back(special::kEos);
  Var logits = decode_forward(t, model, fwd.memory, prefix);
  Var lm = scale(nll_rows(logits, targets), 1.0 / static_cast<double>(targets.size()));

  std::optional<EsLoss> es;
  if (fwd.triple_embs && fwd.sub_roots)
    es = entity_selection_loss(*fwd.triple_embs, *fwd.sub_roots, example.labels, t.param("es.tau"),
                               t.param("es.g"));
  return ExampleLoss{lm, es, std::move(fwd)};
}

namespace {

struct Weighted {
  Var total;
  LossBreakdown parts;
};

Weighted weigh(const ExampleLoss& e, double lambda1, double lambda2) {
  Weighted w;
  w.parts.lambda1 = lambda1;
  w.parts.lambda2 = lambda2;
  w.parts.l_lm = e.lm.item();
  std::vector<Var> terms{e.lm};
  if (e.es) {
    w.parts.l_es_tau = e.es->tau.item();
    w.parts.l_es_g = e.es->g.item();
    if (lambda1 != 0.0) terms.push_back(scale(e.es->tau, lambda1));
    if (lambda2 != 0.0) terms.push_back(scale(e.es->g, lambda2));
  }
  w.total = terms.size() == 1 ? terms[0] : sum(std::span<const Var>(terms));
  return w;
}

void finish(LossBreakdown& b) { b.total = b.l_lm + b.lambda1 * b.l_es_tau + b.lambda2 * b.l_es_g; }

}  // namespace

BatchLoss compute_loss(Tape& t, const ModelState& model, std::span<const PreparedExample> batch, double lambda1,
                       double lambda2) {
  if (batch.empty()) throw std::invalid_argument("compute_loss: empty batch");
  const double inv = 1.0 / static_cast<double>(batch.size());
  std::vector<Var> totals;
  LossBreakdown b{0, 0, 0, 0, lambda1, lambda2};
  for (const auto& ex : batch) {
    auto w = weigh(example_loss(t, model, ex), lambda1, lambda2);
    totals.push_back(w.total);
    b.l_lm += w.parts.l_lm * inv;
    b.l_es_tau += w.parts.l_es_tau * inv;
    b.l_es_g += w.parts.l_es_g * inv;
  }
  finish(b);
  return BatchLoss{scale(sum(std::span<const Var>(totals)), inv), b};
}

double NllStats::ppl() const {
  if (tokens == 0) throw std::invalid_argument("ppl: empty corpus");
  return std::exp(nll / static_cast<double>(tokens));
}

NllStats corpus_nll(const ModelState& model, std::span<const PreparedExample> corpus) {
  if (corpus.empty()) throw std::invalid_argument("ppl: empty corpus");
  NllStats s;
  for (const auto& ex : corpus) {
    Tape t(&model.params, false);
    auto e = example_loss(t, model, ex);
    const std::size_t n = ex.response_ids.size() + 1;
    s.nll += e.lm.item() * static_cast<double>(n);
    s.tokens += n;
  }
  return s;
}

void Adam::step(ParamStore& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    auto it = moments_.find(name);
    if (it == moments_.end())
      it = moments_.emplace(name, std::pair{std::vector<double>(p.numel(), 0.0), std::vector<double>(p.numel(), 0.0)})
               .first;
    auto& [m, v] = it->second;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double g = p.grad[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      p.data[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

double clip_grad_norm(ParamStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, p] : params)
    for (double g : p.grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& [name, p] : params)
      for (double& g : p.grad) g *= s;
  }
  return norm;
}

namespace {

nlohmann::json log_json(const LogEntry& e) {
  nlohmann::json j = {{"step", e.step},          {"l_lm", e.loss.l_lm},     {"l_es_tau", e.loss.l_es_tau},
                      {"l_es_g", e.loss.l_es_g}, {"total", e.loss.total},   {"grad_norm", e.grad_norm}};
  if (e.valid_ppl) j["valid_ppl"] = *e.valid_ppl;
  return j;
}

void dump_batch(const std::filesystem::path& dir, int step, const std::vector<const PreparedExample*>& batch) {
  if (dir.empty()) return;
  std::vector<DialogueExample> ex;
  for (const auto* p : batch) ex.push_back(p->source);
  std::filesystem::create_directories(dir);
  std::ofstream(dir / ("nonfinite_batch_step" + std::to_string(step) + ".jsonl")) << dataset_to_jsonl(ex);
}

}  // namespace

TrainResult train(ModelState& model, const std::vector<PreparedExample>& train_set,
                  const std::vector<PreparedExample>& valid_set, const TrainConfig& config,
                  const std::function<void(const LogEntry&)>& on_step) {
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  if (config.batch_size < 1 || config.steps < 0 || config.eval_every < 1)
    throw std::invalid_argument("train: batch_size and eval_every must be >= 1, steps >= 0");

  std::span<const PreparedExample> valid(valid_set);
  if (config.max_valid > 0 && valid.size() > config.max_valid) valid = valid.first(config.max_valid);

  std::ofstream log_file;
  if (!config.out_dir.empty()) {
    std::filesystem::create_directories(config.out_dir);
    log_file.open(config.out_dir / "train_log.jsonl");
  }

  Rng rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::size_t cursor = order.size();
  auto next_index = [&] {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
      cursor = 0;
    }
    return order[cursor++];
  };

  Adam adam(config.lr);
  TrainResult result;
  result.best_valid_ppl = std::numeric_limits<double>::infinity();
  std::optional<ParamStore> best;

  for (int step = 1; step <= config.steps; ++step) {
    std::vector<const PreparedExample*> batch;
    for (int i = 0; i < config.batch_size; ++i) batch.push_back(&train_set[next_index()]);

    model.params.zero_grad();
    LossBreakdown b{0, 0, 0, 0, config.lambda1, config.lambda2};
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const auto* ex : batch) {
      Tape t(&model.params, true);
      auto w = weigh(example_loss(t, model, *ex), config.lambda1, config.lambda2);
      if (!std::isfinite(w.total.item())) {
        dump_batch(config.out_dir, step, batch);
        throw TrainingError("non-finite loss at step " + std::to_string(step) + " on post \"" +
                            join(ex->source.post) + "\"" +
                            (config.out_dir.empty() ? "" : "; batch dumped to " + config.out_dir.string()));
      }
      t.backward(w.total);
      t.accumulate_into(model.params, inv);
      b.l_lm += w.parts.l_lm * inv;
      b.l_es_tau += w.parts.l_es_tau * inv;
      b.l_es_g += w.parts.l_es_g * inv;
    }
    finish(b);

    LogEntry entry;
    entry.step = step;
    entry.loss = b;
    entry.grad_norm = clip_grad_norm(model.params, config.clip_norm);
    adam.step(model.params);

    if (step % config.eval_every == 0 || step == config.steps) {
      const double ppl = valid.empty() ? std::exp(b.l_lm) : corpus_nll(model, valid).ppl();
      entry.valid_ppl = ppl;
      if (ppl < result.best_valid_ppl) {
        result.best_valid_ppl = ppl;
        result.best_step = step;
        best = model.params;
        if (!config.out_dir.empty()) save_checkpoint(config.out_dir / "best", model);
      }
    }
    if (log_file) log_file << log_json(entry).dump() << '\n';
    if (on_step) on_step(entry);
    result.log.push_back(entry);
  }

  if (!config.out_dir.empty()) save_checkpoint(config.out_dir / "last", model);
  if (config.restore_best && best) model.params = std::move(*best);
  model.params.zero_grad();
  return result;
}

// Container: "CTXGATv1", u64 LE manifest length, manifest JSON, raw LE f64 data.
namespace {

constexpr char kMagic[8] = {'C', 'T', 'X', 'G', 'A', 'T', 'v', '1'};
constexpr int kFormatVersion = 1;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelState& model) {
  nlohmann::json arrays = nlohmann::json::array();
  std::string data;
  for (const auto& [name, tensor] : model.params) {
    arrays.push_back({{"name", name}, {"dtype", "f64"}, {"shape", tensor.shape}, {"offset", data.size()}});
    for (double x : tensor.data) put_u64(data, std::bit_cast<std::uint64_t>(x));
  }
  nlohmann::json manifest = {{"format_version", kFormatVersion},
                             {"config", model.config.to_json()},
                             {"param_seed", model.params.seed()},
                             {"vocab", model.vocab.tokens()},
                             {"arrays", arrays},
                             {"data_bytes", data.size()}};
  const std::string m = manifest.dump();
  std::string out(kMagic, sizeof kMagic);
  put_u64(out, m.size());
  out += m;
  out += data;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write checkpoint " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
  }
  std::filesystem::rename(tmp, path);
}

ModelState load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  const std::string where = "checkpoint " + path.string();
  if (!std::filesystem::is_regular_file(path)) throw CheckpointError(where + ": no such file");
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string bytes = ss.str();

  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw CheckpointError(where + ": bad magic, not a checkpoint file");
  const std::uint64_t mlen = get_u64(bytes.data() + 8);
  if (mlen > bytes.size() - 16) throw CheckpointError(where + ": truncated manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(mlen));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(where + ": corrupt manifest: " + e.what());
  }

  const std::size_t data_start = 16 + mlen;
  const std::size_t data_size = bytes.size() - data_start;
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kFormatVersion)
      throw CheckpointError(where + ": unsupported format version " + std::to_string(version));
    const auto config = ModelConfig::from_json(manifest.at("config"));
    if (expected) {
      auto want = *expected;
      want.vocab_size = config.vocab_size;
      if (!(want == config))
        throw CheckpointError(where + ": architecture mismatch: stored " + config.to_json().dump() + ", expected " +
                              want.to_json().dump());
    }
    if (manifest.at("data_bytes").get<std::size_t>() != data_size)
      throw CheckpointError(where + ": data section is " + std::to_string(data_size) + " bytes, manifest says " +
                            manifest.at("data_bytes").dump());

    auto vocab = Vocab::from_tokens(manifest.at("vocab").get<std::vector<std::string>>());
    if (static_cast<int>(vocab.size()) != config.vocab_size)
      throw CheckpointError(where + ": vocab has " + std::to_string(vocab.size()) + " tokens, config says " +
                            std::to_string(config.vocab_size));
    // Build the reference layout, then overwrite every array from the file.
    ModelState model = ModelState::create(config, std::move(vocab), manifest.at("param_seed").get<std::uint64_t>());
    std::set<std::string> seen;
    for (const auto& a : manifest.at("arrays")) {
      const auto name = a.at("name").get<std::string>();
      if (!model.params.contains(name)) throw CheckpointError(where + ": unexpected array '" + name + "'");
      if (a.at("dtype").get<std::string>() != "f64")
        throw CheckpointError(where + ": array '" + name + "' has unsupported dtype " + a.at("dtype").dump());
      auto& tensor = model.params.at(name);
      const auto shape = a.at("shape").get<Shape>();
      if (shape != tensor.shape)
        throw CheckpointError(where + ": array '" + name + "' has shape " + shape_str(shape) + ", expected " +
                              shape_str(tensor.shape));
      const auto offset = a.at("offset").get<std::size_t>();
      if (offset > data_size || tensor.numel() * 8 > data_size - offset)
        throw CheckpointError(where + ": array '" + name + "' extends past the end of the data");
      for (std::size_t i = 0; i < tensor.numel(); ++i)
        tensor.data[i] = std::bit_cast<double>(get_u64(bytes.data() + data_start + offset + 8 * i));
      seen.insert(name);
    }
    for (const auto& name : model.params.names())
      if (!seen.count(name)) throw CheckpointError(where + ": missing array '" + name + "'");
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(where + ": corrupt manifest: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(where + ": " + e.what());
  }
}

}  // namespace ctxgat
