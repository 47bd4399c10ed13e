#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "docmt/corpus.hpp"
#include "docmt/metrics.hpp"
#include "docmt/rng.hpp"
#include "docmt/selftrain.hpp"
#include "docmt/train.hpp"

namespace docmt {

/// Everything one experiment needs, loaded from a single JSON file; command
/// line flags override individual fields.
struct ExperimentConfig {
  SyntheticSpec corpus;
  TrainConfig train;
  AdaptConfig adapt;
  DecodeSettings decode;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  int jobs = 1;
  std::string out = "runs";

  /// Points corpus, training and decoding at one seed.
  void apply_seed(std::uint64_t seed);
  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Parses a config file; throws std::runtime_error naming the file.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

struct Evaluation {
  BleuReport bleu;
  std::optional<double> consistency;
  /// Smoothed sentence-set BLEU of each document, in corpus order.
  std::vector<double> doc_bleu;
  std::size_t failed_docs = 0;
};

void to_json(nlohmann::json& j, const Evaluation& e);

/// Scores decode results against the corpus references. Failed documents
/// count as empty output. The consistency rate needs an ambiguity table.
Evaluation evaluate(const std::vector<DecodeResult>& results, const ParallelDocCorpus& corpus,
                    const AmbiguityTable* table = nullptr);

/// Wins of `a` over `b` and of `b` over `a` on per-document BLEU; ties dropped.
std::pair<long, long> doc_wins(const std::vector<double>& a, const std::vector<double>& b);

void write_results_jsonl(const std::filesystem::path& path, const std::vector<DecodeResult>& results);
std::vector<DecodeResult> read_results_jsonl(const std::filesystem::path& path);

/// Per-document wall time: {"doc_id", "seconds": [...], "total"} per line.
void write_timing_jsonl(const std::filesystem::path& path, const std::vector<DecodeResult>& results);

// ---- random search over adaptation hyperparameters ----

struct SearchSpace {
  double alpha_min = 5e-5;
  double alpha_max = 5e-1;
  double lambda_min = 0.001;
  double lambda_max = 0.999;
  std::vector<int> steps = {2, 4, 8};
  std::vector<int> passes = {2, 4};
};

/// alpha log-uniform, lambda uniform, steps and passes uniform over their sets.
AdaptConfig sample_adapt(const SearchSpace& space, Rng& rng);

struct Trial {
  int index = 0;
  AdaptConfig adapt;
  double dev_bleu = 0;
  std::optional<double> consistency;
  std::string error;
};

struct SearchOutcome {
  double baseline_bleu = 0;
  std::vector<Trial> trials;
  /// Index into trials of the best successful trial; empty if all failed.
  std::optional<std::size_t> best;
};

/// Sequential trials on `dev`, each from the unadapted parameters.
SearchOutcome random_search(const Translator& tr, const ParallelDocCorpus& dev, const AmbiguityTable* table,
                            int budget, std::uint64_t seed, const DecodeSettings& settings, int jobs = 1,
                            const SearchSpace& space = {});

void write_trials_csv(const std::filesystem::path& path, const std::vector<Trial>& trials);

// ---- trend reports ----

/// One row of a trend table: x is the independent variable (checkpoint dev
/// BLEU or sentences per document), the BLEU values are test scores.
struct TrendRow {
  std::string label;
  double x = 0;
  double baseline_bleu = 0;
  double selftrain_bleu = 0;
  double diff() const { return selftrain_bleu - baseline_bleu; }
};

struct Trend {
  std::string name;
  std::vector<TrendRow> rows;  // sorted by x
  double spearman = 0;
};

/// Sorts by x and computes the rank correlation of x against the difference.
/// Throws std::invalid_argument with fewer than two rows.
Trend make_trend(std::string name, std::vector<TrendRow> rows);

void write_trends_csv(const std::filesystem::path& path, const std::vector<Trend>& trends);

}  // namespace docmt
