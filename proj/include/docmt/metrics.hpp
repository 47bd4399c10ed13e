#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "docmt/corpus.hpp"

namespace docmt {

struct BleuReport {
  double bleu = 0;
  std::vector<double> precisions;  // p_1 .. p_max_n
  double brevity_penalty = 0;
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;

  /// "BLEU = 23.45, 60.1/30.2/15.0/8.0 (BP=1.000, ratio=1.010, hyp_len=.., ref_len=..)"
  std::string summary() const;
};

void to_json(nlohmann::json& j, const BleuReport& r);

/// Corpus BLEU over lowercased whitespace tokens. `references` holds one or
/// more reference streams, each aligned with `candidates`. Counts are clipped
/// by the maximum count in any reference; the effective reference length is
/// the closest reference length (shorter on ties).
BleuReport corpus_bleu(const std::vector<std::string>& candidates,
                       const std::vector<std::vector<std::string>>& references, int max_n = 4, bool smooth = false);

/// Fraction of documents in which every ambiguous source type that occurs at
/// least twice is rendered with one single synonym throughout. Empty when no
/// document qualifies.
std::optional<double> consistency_rate(const std::vector<std::vector<std::string>>& translations,
                                       const ParallelDocCorpus& corpus, const AmbiguityTable& table);

/// Exact two-sided binomial test of wins_a vs wins_b against p = 1/2.
double binomial_sign_test(long wins_a, long wins_b);

/// Spearman rank correlation with average ranks for ties. NaN when either
/// side is constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace docmt
