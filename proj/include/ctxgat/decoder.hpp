#pragma once

#include "ctxgat/encoder.hpp"

#include <optional>
#include <span>
#include <vector>

namespace ctxgat {

// Rows: [rt_one; rt_two?; post states]. With ca_gat off there are no root rows.
struct DecoderMemory {
  Var rows;
  int n_roots = 0;
};

// A missing rt_one is replaced by the learned null root when the knowledge
// path is enabled. rt_two without rt_one is an error.
DecoderMemory build_memory(Tape& t, const ModelState& model, std::optional<Var> rt_one,
                           std::optional<Var> rt_two, const PostEncoding& post);

// Memory normalized once, with per-layer cross-attention keys and values.
struct DecoderContext {
  std::vector<Var> keys;
  std::vector<Var> values;
};

DecoderContext prepare_memory(Tape& t, const ModelState& model, const DecoderMemory& memory);

// Logits (prefix_len x vocab); row i predicts token i + 1. The prefix starts with [BOS].
Var decode_forward(Tape& t, const ModelState& model, const DecoderContext& ctx, std::span<const int> prefix);
Var decode_forward(Tape& t, const ModelState& model, const DecoderMemory& memory, std::span<const int> prefix);

struct DecodeOptions {
  int max_len = 32;
  int beam = 1;  // 1 = greedy
};

// Generated ids without [BOS]/[EOS]. Never emits [PAD], [CLS], [SEP] or [BOS].
std::vector<int> generate(Tape& t, const ModelState& model, const DecoderMemory& memory,
                          const DecodeOptions& options);

// Keeps `width` hypotheses ranked by summed log-probability over length
// (the [EOS] step included); generate() uses it when beam > 1.
std::vector<int> beam_search(Tape& t, const ModelState& model, const DecoderContext& ctx, int width, int max_len);

}  // namespace ctxgat
