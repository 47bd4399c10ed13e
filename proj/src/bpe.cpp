#include "docmt/bpe.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace docmt {

namespace {

const char* const kSpecialSymbols[kNumSpecials] = {"<pad>", "<s>", "</s>", "<unk>"};
constexpr std::string_view kHeaderTag = "#docmt-bpe";
constexpr int kFormatVersion = 1;

// Splits a word into UTF-8 code points; the last one carries the
// end-of-word suffix.
std::vector<std::string> initial_symbols(std::string_view word) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < word.size()) {
    const auto lead = static_cast<unsigned char>(word[i]);
    std::size_t len = 1;
    if (lead >= 0xF0) {
      len = 4;
    } else if (lead >= 0xE0) {
      len = 3;
    } else if (lead >= 0xC0) {
      len = 2;
    }
    len = std::min(len, word.size() - i);
    out.emplace_back(word.substr(i, len));
    i += len;
  }
  if (!out.empty()) out.back() += kEndOfWord;
  return out;
}

void apply_merge(std::vector<std::string>& symbols, const BpeModel::Merge& merge) {
  std::vector<std::string> merged;
  merged.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == merge.first && symbols[i + 1] == merge.second) {
      merged.push_back(symbols[i] + symbols[i + 1]);
      ++i;
    } else {
      merged.push_back(std::move(symbols[i]));
    }
  }
  symbols = std::move(merged);
}

}  // namespace

std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

BpeModel BpeModel::learn(std::span<const std::string> corpus, int num_merges) {
  if (corpus.empty()) throw BpeError("learn_bpe: empty corpus");
  if (num_merges < 0) throw BpeError("learn_bpe: num_merges must be >= 0");

  std::map<std::string, long long> word_freq;
  for (const auto& sentence : corpus) {
    for (auto& w : split_words(sentence)) ++word_freq[w];
  }
  if (word_freq.empty()) throw BpeError("learn_bpe: corpus has no words");

  std::vector<std::pair<std::vector<std::string>, long long>> words;
  std::set<std::string> alphabet;
  for (const auto& [w, f] : word_freq) {
    auto syms = initial_symbols(w);
    alphabet.insert(syms.begin(), syms.end());
    words.emplace_back(std::move(syms), f);
  }

  std::vector<Merge> merges;
  for (int round = 0; round < num_merges; ++round) {
    std::map<Merge, long long> counts;
    for (const auto& [syms, f] : words) {
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) counts[{syms[i], syms[i + 1]}] += f;
    }
    if (counts.empty()) break;
    // std::map iterates in lexicographic order, so the first maximum wins ties.
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    const Merge chosen = best->first;
    for (auto& [syms, f] : words) apply_merge(syms, chosen);
    merges.push_back(chosen);
  }
  return from_merges({alphabet.begin(), alphabet.end()}, std::move(merges));
}

BpeModel BpeModel::from_merges(std::vector<std::string> alphabet, std::vector<Merge> merges) {
  BpeModel m;
  m.alphabet_ = std::move(alphabet);
  m.merges_ = std::move(merges);
  for (std::size_t i = 0; i < m.merges_.size(); ++i) m.rank_.emplace(m.merges_[i], static_cast<int>(i));
  m.build_vocab();
  return m;
}

void BpeModel::build_vocab() {
  symbols_.clear();
  ids_.clear();
  auto add = [&](const std::string& s) {
    if (ids_.emplace(s, static_cast<int>(symbols_.size())).second) symbols_.push_back(s);
  };
  for (const char* s : kSpecialSymbols) add(s);
  for (const auto& s : alphabet_) add(s);
  for (const auto& [l, r] : merges_) add(l + r);
}

std::vector<std::string> BpeModel::segment(std::string_view word) const {
  auto syms = initial_symbols(word);
  while (syms.size() > 1) {
    int best_rank = std::numeric_limits<int>::max();
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      auto it = rank_.find({syms[i], syms[i + 1]});
      if (it != rank_.end() && it->second < best_rank) {
        best_rank = it->second;
      }
    }
    if (best_rank == std::numeric_limits<int>::max()) break;
    apply_merge(syms, merges_[static_cast<std::size_t>(best_rank)]);
  }
  return syms;
}

std::vector<int> BpeModel::encode(std::string_view sentence) const {
  std::vector<int> ids;
  for (const auto& word : split_words(sentence)) {
    for (const auto& s : segment(word)) {
      auto it = ids_.find(s);
      ids.push_back(it == ids_.end() ? kUnkId : it->second);
    }
  }
  return ids;
}

std::string BpeModel::decode(std::span<const int> ids) const {
  std::string out;
  bool open_word = false;
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) {
      throw BpeError("decode: unknown token id " + std::to_string(id));
    }
    if (id == kPadId || id == kBosId || id == kEosId) continue;
    if (id == kUnkId) {
      if (!out.empty() && !open_word) out.push_back(' ');
      out += kSpecialSymbols[kUnkId];
      open_word = true;
      continue;
    }
    std::string_view sym = symbols_[static_cast<std::size_t>(id)];
    if (!out.empty() && !open_word) out.push_back(' ');
    if (sym.ends_with(kEndOfWord)) {
      out += sym.substr(0, sym.size() - kEndOfWord.size());
      open_word = false;
    } else {
      out += sym;
      open_word = true;
    }
  }
  return out;
}

const std::string& BpeModel::symbol(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) {
    throw BpeError("unknown token id " + std::to_string(id));
  }
  return symbols_[static_cast<std::size_t>(id)];
}

int BpeModel::id_of(std::string_view symbol) const {
  auto it = ids_.find(std::string(symbol));
  return it == ids_.end() ? -1 : it->second;
}

std::string BpeModel::serialize() const {
  std::ostringstream os;
  os << kHeaderTag << " v" << kFormatVersion << " num_merges=" << merges_.size() << " alphabet=";
  for (std::size_t i = 0; i < alphabet_.size(); ++i) os << (i ? " " : "") << alphabet_[i];
  os << '\n';
  for (const auto& [l, r] : merges_) os << l << ' ' << r << '\n';
  return os.str();
}

BpeModel BpeModel::parse(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string header;
  if (!std::getline(is, header)) throw BpeError("bpe file: missing header");
  auto fields = split_words(header);
  if (fields.size() < 4 || fields[0] != kHeaderTag) throw BpeError("bpe file: bad header");
  if (fields[1] != "v" + std::to_string(kFormatVersion)) throw BpeError("bpe file: unsupported version " + fields[1]);
  if (!fields[2].starts_with("num_merges=")) throw BpeError("bpe file: header lacks num_merges");
  const long count = std::stol(fields[2].substr(11));
  if (!fields[3].starts_with("alphabet=")) throw BpeError("bpe file: header lacks alphabet");
  std::vector<std::string> alphabet;
  if (fields[3].size() > 9) alphabet.push_back(fields[3].substr(9));
  for (std::size_t i = 4; i < fields.size(); ++i) alphabet.push_back(fields[i]);

  std::vector<Merge> merges;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto parts = split_words(line);
    if (parts.size() != 2) throw BpeError("bpe file: malformed merge line '" + line + "'");
    merges.emplace_back(parts[0], parts[1]);
  }
  if (static_cast<long>(merges.size()) != count) {
    throw BpeError("bpe file: header announces " + std::to_string(count) + " merges, found " + std::to_string(merges.size()));
  }
  return from_merges(std::move(alphabet), std::move(merges));
}

void BpeModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw BpeError("cannot write " + path.string());
  out << serialize();
}

BpeModel BpeModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BpeError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace docmt
