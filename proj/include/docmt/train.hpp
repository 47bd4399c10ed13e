#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "docmt/corpus.hpp"
#include "docmt/model.hpp"
#include "docmt/optim.hpp"
#include "docmt/selftrain.hpp"

namespace docmt {

struct TrainConfig {
  ModelConfig model;
  int bpe_merges = 512;
  long steps = 3000;
  int batch_size = 32;
  double smoothing = 0.1;
  double clip_norm = 5.0;
  double lr_scale = 1.0;
  int warmup_steps = 400;
  /// Dev BLEU and a checkpoint every this many steps; 0 disables both.
  long eval_every = 500;
  /// Dev documents decoded at each evaluation (prefix of the dev set).
  int eval_docs = 50;
  std::uint64_t seed = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Sentence-level training loop. Batch composition and dropout masks are pure
/// functions of (seed, step), so a run resumed from a checkpoint continues
/// exactly like an uninterrupted one.
class Trainer {
 public:
  Trainer(ModelParams params, AdamState adam, std::vector<SentencePair> data, const TrainConfig& config);

  /// One optimizer step; returns the batch loss before the update.
  double step();

  /// Example indices of the batch taken at (0-based) step `step`.
  std::vector<std::size_t> batch_indices(long step) const;

  long steps_done() const { return adam_.step; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }
  const AdamState& adam() const { return adam_; }

 private:
  const std::vector<std::size_t>& epoch_order(long epoch) const;

  ModelParams params_;
  AdamState adam_;
  std::vector<SentencePair> data_;
  TrainConfig config_;
  mutable long cached_epoch_ = -1;
  mutable std::vector<std::size_t> cached_order_;
};

/// Fresh Adam state carrying the configured schedule.
AdamState make_adam(const TrainConfig& config);

/// Learns both tokenizers on the training pairs and sizes the model config.
Translator prepare_translator(const std::vector<TextPair>& train, const TrainConfig& config);

std::vector<SentencePair> encode_pairs(const Translator& tr, const std::vector<TextPair>& pairs);

struct TrainLogRow {
  long step = 0;
  double loss = 0;
  double dev_bleu = -1;  // negative when not evaluated at this step
};

/// Trains into `dir`: src.bpe, tgt.bpe, train_config.json, ckpt-<step>
/// checkpoints with dev BLEU in their metadata, final, and train_log.csv.
/// With `resume`, continues from that checkpoint (the tokenizers in `dir`
/// are reused). `progress` receives every log row when set.
std::vector<TrainLogRow> train_model(const std::vector<TextPair>& train, const ParallelDocCorpus& dev,
                                     const TrainConfig& config, const std::filesystem::path& dir,
                                     const std::filesystem::path& resume = {},
                                     const std::function<void(const TrainLogRow&)>& progress = {});

/// Tokenizers from the checkpoint's directory plus its parameters.
Translator load_translator(const std::filesystem::path& checkpoint);

/// Checkpoint stems written by train_model, ordered by step (final excluded).
std::vector<std::filesystem::path> list_checkpoints(const std::filesystem::path& dir);

}  // namespace docmt
