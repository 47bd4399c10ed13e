#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace docmt {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumSpecials = 4;

/// Suffix carried by word-final subwords.
inline constexpr std::string_view kEndOfWord = "</w>";

class BpeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Lowercases ASCII letters and collapses runs of whitespace to one space.
std::string normalize_text(std::string_view text);

std::vector<std::string> split_words(std::string_view text);

/// Byte-pair encoding model: ordered merge list plus the id map derived from
/// it. Immutable after construction.
class BpeModel {
 public:
  using Merge = std::pair<std::string, std::string>;

  BpeModel() = default;

  /// Greedy learning: each round merges the most frequent adjacent pair,
  /// ties broken by the lexicographically smallest (left, right). Stops early
  /// once no pair is left.
  static BpeModel learn(std::span<const std::string> corpus, int num_merges);

  /// Rebuilds a model from its initial alphabet and merge list.
  static BpeModel from_merges(std::vector<std::string> alphabet, std::vector<Merge> merges);

  std::vector<int> encode(std::string_view sentence) const;
  /// Throws BpeError on ids outside the vocabulary.
  std::string decode(std::span<const int> ids) const;

  /// Subword symbols of one word after applying the merges.
  std::vector<std::string> segment(std::string_view word) const;

  const std::vector<Merge>& merges() const { return merges_; }
  const std::vector<std::string>& alphabet() const { return alphabet_; }
  std::size_t vocab_size() const { return symbols_.size(); }
  const std::string& symbol(int id) const;
  /// -1 when the symbol is not in the vocabulary.
  int id_of(std::string_view symbol) const;

  std::string serialize() const;
  static BpeModel parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static BpeModel load(const std::filesystem::path& path);

  bool operator==(const BpeModel& other) const {
    return alphabet_ == other.alphabet_ && merges_ == other.merges_;
  }

 private:
  void build_vocab();

  std::vector<std::string> alphabet_;
  std::vector<Merge> merges_;
  std::map<Merge, int> rank_;
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace docmt
