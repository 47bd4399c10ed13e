#pragma once

#include <functional>
#include <span>
#include <vector>

#include "docmt/bpe.hpp"
#include "docmt/model.hpp"

namespace docmt {

/// Next-token log-probabilities for a set of equally long prefixes.
using StepFunction = std::function<std::vector<std::vector<Real>>(const std::vector<std::vector<int>>&)>;

struct SearchSettings {
  int beam_size = 4;
  double length_penalty = 0.6;
  int max_len = 64;
  int bos = kBosId;
  int eos = kEosId;
};

struct Hypothesis {
  std::vector<int> tokens;  // BOS-prefixed
  double logprob = 0;
  bool finished = false;
};

struct SearchResult {
  /// Generated tokens after BOS; ends with EOS unless max_len was reached.
  std::vector<int> tokens;
  double logprob = 0;
  double score = 0;

  /// tokens without a trailing EOS.
  std::vector<int> content(int eos = kEosId) const;
};

/// ((5 + length) / 6) ^ alpha
double length_penalty(std::size_t length, double alpha);

/// Argmax at every step, lowest token id on ties.
SearchResult greedy_search(const StepFunction& step, int max_len, int bos = kBosId, int eos = kEosId);

/// Beam search. Finished hypotheses leave the beam, which refills from the
/// unfinished candidates; scores are logprob / length_penalty. Stops once no
/// alive hypothesis can beat the best finished one.
SearchResult beam_search(const StepFunction& step, const SearchSettings& settings);

StepFunction model_step_function(const ModelParams& params, const SourceEncoding& enc);

SearchResult greedy_decode(const ModelParams& params, std::span<const int> src, int max_len);
SearchResult beam_decode(const ModelParams& params, std::span<const int> src, const SearchSettings& settings);

}  // namespace docmt
