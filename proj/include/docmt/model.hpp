#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "docmt/tensor.hpp"

namespace docmt {

struct ModelConfig {
  int num_layers = 2;
  int model_width = 64;
  int num_heads = 4;
  int ffn_width = 128;
  int src_vocab = 0;
  int tgt_vocab = 0;
  int max_positions = 256;
  double dropout = 0.1;
  /// Output projection reuses the target embedding (transposed) when set.
  bool tie_output = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

class SequenceTooLong : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// Named transformer parameters plus the optional backup copy used by
/// decode-time adaptation.
class ModelParams {
 public:
  ModelConfig config;
  std::map<std::string, Tensor> tensors;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  std::size_t parameter_count() const;
  void zero_grad();

  /// Deep copy of values (and backup); the copy shares no storage.
  ModelParams deep_copy() const;

  void backup();
  /// Throws std::logic_error when no backup was taken.
  void restore();
  bool has_backup() const { return !backup_.empty(); }
  void clear_backup() { backup_.clear(); }
  const std::vector<Real>& backup_of(const std::string& name) const;

  bool values_equal(const ModelParams& other) const;

 private:
  std::map<std::string, std::vector<Real>> backup_;
};

ModelParams init_model(const ModelConfig& config, std::uint64_t seed);

/// Padded mini-batch. Source rows end with EOS; decoder input starts with
/// BOS; decoder output ends with EOS and is PAD elsewhere.
struct Batch {
  std::size_t size = 0;
  std::size_t src_len = 0;
  std::size_t tgt_len = 0;
  std::vector<int> src;
  std::vector<int> tgt_in;
  std::vector<int> tgt_out;
};

using SentencePair = std::pair<std::vector<int>, std::vector<int>>;

Batch make_batch(std::span<const SentencePair> pairs);
Batch make_batch(std::span<const int> src, std::span<const int> tgt);

/// Teacher-forced logits [B, T, V].
Tensor forward_logits(const ModelParams& params, const Batch& batch, bool train_mode, Rng* rng);

/// Mean label-smoothed cross-entropy over non-pad target positions.
Tensor forward_loss(const ModelParams& params, const Batch& batch, Real smoothing, bool train_mode,
                    Rng* rng = nullptr);
Tensor forward_loss(const ModelParams& params, std::span<const int> src, std::span<const int> tgt,
                    Real smoothing, bool train_mode, Rng* rng = nullptr);

/// Encoder output for one source sentence with the per-layer cross-attention
/// keys and values already projected.
struct SourceEncoding {
  std::size_t src_len = 0;
  Tensor memory;
  std::vector<Tensor> cross_keys_t;
  std::vector<Tensor> cross_values;
};

SourceEncoding encode_source(const ModelParams& params, std::span<const int> src);

/// Next-token log-probabilities for each prefix (all prefixes equally long
/// and starting with BOS). Evaluation mode, no graph recorded.
std::vector<std::vector<Real>> decode_step(const ModelParams& params, const SourceEncoding& enc,
                                           const std::vector<std::vector<int>>& prefixes);

std::vector<Real> sinusoid_positions(std::size_t positions, std::size_t width);

}  // namespace docmt
