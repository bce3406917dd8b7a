#pragma once

#include "ctxgat/pipeline.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>

namespace ctxgat {

struct LossBreakdown {
  double l_lm = 0.0;
  double l_es_tau = 0.0;
  double l_es_g = 0.0;
  double total = 0.0;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
};

struct EsLoss {
  Var tau;  // 1 x 1
  Var g;    // 1 x 1
};

// Two-class cross-entropy of each node's head logits against its label,
// averaged over triples and over subgraphs respectively.
EsLoss entity_selection_loss(Var triple_embs, Var roots, const EntityLabels& labels, Var w_tau, Var w_g);

struct ExampleLoss {
  Var lm;             // token-mean NLL of the response, [EOS] included
  std::optional<EsLoss> es;  // absent when nothing was retrieved or the knowledge path is off
  KnowledgeForward forward;
};

ExampleLoss example_loss(Tape& t, const ModelState& model, const PreparedExample& example);

struct BatchLoss {
  Var total;
  LossBreakdown breakdown;
};

// Mean over the batch of l_lm + lambda1 * l_es_tau + lambda2 * l_es_g.
BatchLoss compute_loss(Tape& t, const ModelState& model, std::span<const PreparedExample> batch,
                       double lambda1 = 1.0, double lambda2 = 1.0);

struct NllStats {
  double nll = 0.0;
  std::size_t tokens = 0;
  double ppl() const;
};

// Teacher-forced NLL summed over every response token and [EOS].
NllStats corpus_nll(const ModelState& model, std::span<const PreparedExample> corpus);

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(ParamStore& params);
  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>, std::less<>> moments_;
};

// Rescales all gradients so their global L2 norm is at most max_norm; returns the norm before clipping.
double clip_grad_norm(ParamStore& params, double max_norm);

struct TrainConfig {
  double lr = 3e-4;
  int batch_size = 16;
  int steps = 2000;
  int eval_every = 200;
  std::uint64_t seed = 1;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double clip_norm = 1.0;
  // Validation examples used for PPL checks; 0 means all.
  std::size_t max_valid = 0;
  bool restore_best = true;
  // When set: best/last checkpoints, train_log.jsonl and failure dumps go here.
  std::filesystem::path out_dir;
};

struct LogEntry {
  int step = 0;
  LossBreakdown loss;
  double grad_norm = 0.0;
  std::optional<double> valid_ppl;
};

struct TrainResult {
  std::vector<LogEntry> log;
  int best_step = 0;
  double best_valid_ppl = 0.0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Trains `model` in place. With restore_best the parameters of the best
// validation checkpoint are restored at the end.
TrainResult train(ModelState& model, const std::vector<PreparedExample>& train_set,
                  const std::vector<PreparedExample>& valid_set, const TrainConfig& config,
                  const std::function<void(const LogEntry&)>& on_step = {});

class CheckpointError : public DataError {
 public:
  using DataError::DataError;
};

void save_checkpoint(const std::filesystem::path& path, const ModelState& model);
// Throws CheckpointError on corrupt files, and when `expected` is given and differs from the stored config.
ModelState load_checkpoint(const std::filesystem::path& path,
                           const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace ctxgat
