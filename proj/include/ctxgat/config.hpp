#pragma once

// Flat key=value run configuration with [sections]; the file format of
// --config and of the config.ini echoed into every output directory.

#include "ctxgat/training.hpp"

#include <filesystem>
#include <string>

namespace ctxgat {

struct RunConfig {
  // [paths]
  std::string kb;
  std::string data;
  std::string ckpt;
  std::string out;
  // [run]
  std::uint64_t seed = 7;
  // [model]
  ModelConfig model;
  // [ablation] es_loss lives here; the other switches are ModelConfig fields.
  bool es_loss = true;
  // [train]
  TrainConfig train;
  // [decode]
  DecodeOptions decode;
  // [synth]
  SynthConfig synth;

  // Unknown sections or keys and unparsable values raise DataError.
  static RunConfig load(const std::filesystem::path& path);
  static RunConfig parse(const std::string& text, const std::string& source = "<memory>");
  std::string to_ini() const;
  void save(const std::filesystem::path& path) const;

  // Settings with the seed and ablation switches applied.
  TrainConfig train_config() const;
  SynthConfig synth_config() const;
};

// A dataset directory: kb.tsv, optional stopwords.txt, train/valid/test.jsonl.
struct DataBundle {
  KnowledgeBase kb;
  StopWords stopwords;
  std::vector<DialogueExample> train, valid, test;
  // Golden triples per split file that name facts missing from the KB.
  std::map<std::string, std::size_t> unresolved_golden;

  const std::vector<DialogueExample>& split(std::string_view name) const;
};

// Missing valid/test files are errors only when `need_valid_test` is set.
// An empty `kb` means <dir>/kb.tsv.
DataBundle load_data_dir(const std::filesystem::path& dir, const std::filesystem::path& kb = {},
                         bool need_valid_test = true);

}  // namespace ctxgat
