#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "docmt/bpe.hpp"
#include "docmt/corpus.hpp"
#include "docmt/decoder.hpp"
#include "docmt/model.hpp"
#include "docmt/optim.hpp"

namespace docmt {

/// A sentence-level model together with its source and target tokenizers.
struct Translator {
  BpeModel src_bpe;
  BpeModel tgt_bpe;
  ModelParams params;
};

enum class DecodeMode { kBaseline, kSelfTrain, kOracle };

std::string mode_name(DecodeMode mode);
DecodeMode parse_mode(const std::string& name);

struct DecodeSettings {
  int beam_size = 4;
  double length_penalty = 0.6;
  /// Hypotheses may run this many tokens past the source length.
  int max_len_extra = 10;
  /// Dropout during the adaptation gradient steps.
  bool adapt_dropout = false;
  /// Label smoothing of the adaptation loss (plain cross-entropy by default).
  double adapt_smoothing = 0.0;
  /// Per-sentence loss is the token mean; false switches to the token sum.
  bool token_mean = true;
  /// Re-captures the prior at the start of every pass after the first.
  bool recapture_prior_per_pass = false;
  /// Seeds adaptation dropout; unused otherwise.
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const DecodeSettings& s);
void from_json(const nlohmann::json& j, DecodeSettings& s);

struct DecodeResult {
  std::string doc_id;
  DecodeMode mode = DecodeMode::kBaseline;
  AdaptConfig adapt;
  /// One translation list per pass; the last one is the output.
  std::vector<std::vector<std::string>> pass_translations;
  /// Model log-probability of each emitted translation (last pass).
  std::vector<double> logprobs;
  /// Wall time per sentence (last pass), including adaptation.
  std::vector<double> seconds;
  std::string error;

  const std::vector<std::string>& translations() const;
  bool ok() const { return error.empty(); }
};

/// One JSON-lines record: doc_id, mode, passes, alpha, lambda, steps,
/// translations, logprobs (plus error on failure). Timings are left out so
/// the record is a pure function of model, input and settings.
nlohmann::json result_to_json(const DecodeResult& r);
DecodeResult result_from_json(const nlohmann::json& j);

/// Sentence-by-sentence beam search with fixed parameters.
DecodeResult baseline_decode_document(const Translator& tr, const Document& doc, const DecodeSettings& settings);

/// Decode each sentence left to right, then take adapt.steps decay-prior
/// gradient steps on (source, emitted translation) before moving on.
/// Requires a backup (the prior). Parameters are left adapted.
DecodeResult selftrain_decode_document(Translator& tr, const Document& doc, const AdaptConfig& adapt,
                                       const DecodeSettings& settings);

/// adapt.passes sweeps over the document with continued adaptation; the
/// prior is not re-captured between passes unless the settings ask for it.
DecodeResult multipass_decode(Translator& tr, const Document& doc, const AdaptConfig& adapt,
                              const DecodeSettings& settings);

/// Single pass whose update targets are the references; emitted output is
/// still the model's own translation.
DecodeResult oracle_selftrain_decode_document(Translator& tr, const Document& doc, const AdaptConfig& adapt,
                                              const DecodeSettings& settings);

/// Decodes every document from a fresh copy of tr.params (the prior), on up
/// to `jobs` threads. Per-document failures are reported in
/// DecodeResult::error. Output order follows the input.
std::vector<DecodeResult> decode_corpus(const Translator& tr, const std::vector<Document>& docs, DecodeMode mode,
                                        const AdaptConfig& adapt, const DecodeSettings& settings, int jobs = 1);

}  // namespace docmt
