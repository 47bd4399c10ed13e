#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace docmt {

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Document {
  std::string doc_id;
  std::vector<std::string> src;
  /// Empty when the document carries no references.
  std::vector<std::string> ref;

  bool has_refs() const { return !ref.empty(); }
  void validate() const;
  bool operator==(const Document&) const = default;
};

struct ParallelDocCorpus {
  std::vector<Document> docs;
  nlohmann::json meta = nlohmann::json::object();

  bool operator==(const ParallelDocCorpus& other) const { return docs == other.docs; }
};

using TextPair = std::pair<std::string, std::string>;

/// Source type -> its target synonyms.
using AmbiguityTable = std::map<std::string, std::vector<std::string>>;

/// Parameters of the synthetic bilingual generator. Ordinary source words map
/// one-to-one onto target words; each document mentions one ambiguous entity
/// whose translation is one of `synonyms` words, fixed per document by a
/// latent style. Sentences mentioning the entity may carry a style marker
/// that agrees with the document style with probability `cue_fidelity`.
struct SyntheticSpec {
  int base_vocab = 64;
  int num_ambiguous = 8;
  int synonyms = 2;
  int min_len = 4;
  int max_len = 12;
  int min_sents = 8;
  int max_sents = 8;
  /// Probability that a sentence mentions the document's ambiguous entity.
  double ambiguous_rate = 0.3;
  /// Probability that a sentence mentioning the entity carries a marker.
  double cue_rate = 1.0;
  double cue_fidelity = 0.7;
  int train_docs = 2000;
  int dev_docs = 200;
  int test_docs = 200;
  std::uint64_t seed = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);

struct SyntheticCorpus {
  std::vector<TextPair> train;
  ParallelDocCorpus dev;
  ParallelDocCorpus test;
  AmbiguityTable ambiguity;
};

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

/// Fresh documents under the lexicon of spec.seed, with their own sentence
/// count range and document seed. Used for length sweeps on a fixed model.
ParallelDocCorpus generate_documents(const SyntheticSpec& spec, int count, std::uint64_t doc_seed,
                                     const std::string& id_prefix);

ParallelDocCorpus load_jsonl(const std::filesystem::path& path);
void save_jsonl(const std::filesystem::path& path, const ParallelDocCorpus& corpus);
ParallelDocCorpus parse_jsonl(const std::string& text);
std::string to_jsonl(const ParallelDocCorpus& corpus);

std::vector<TextPair> load_tsv(const std::filesystem::path& path);
void save_tsv(const std::filesystem::path& path, const std::vector<TextPair>& pairs);

AmbiguityTable load_ambiguity(const std::filesystem::path& path);
void save_ambiguity(const std::filesystem::path& path, const AmbiguityTable& table);

/// Flattens documents to (src, ref) pairs and shuffles them with `seed`.
std::vector<TextPair> split_sentences_for_training(const ParallelDocCorpus& corpus, std::uint64_t seed);

}  // namespace docmt
