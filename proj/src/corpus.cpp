#include "docmt/corpus.hpp"

#include <fstream>
#include <sstream>

#include "docmt/rng.hpp"

namespace docmt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum class Slot { kWord, kEntity, kMarker };

struct Token {
  Slot slot;
  int value;  // word index, or marker offset from the document style
};

// Style-independent draw of a document; rendering picks the style.
struct Template {
  int entity = -1;
  std::vector<std::vector<Token>> sentences;
};

struct Lexicon {
  std::vector<int> target_of;  // ordinary source index -> target index
};

Lexicon make_lexicon(const SyntheticSpec& spec) {
  Rng rng = Rng::derive(spec.seed, 1);
  Lexicon lex;
  lex.target_of.resize(static_cast<std::size_t>(spec.base_vocab));
  for (int i = 0; i < spec.base_vocab; ++i) lex.target_of[static_cast<std::size_t>(i)] = i;
  rng.shuffle(lex.target_of);
  return lex;
}

std::string src_word(int i) { return "s" + std::to_string(i); }
std::string tgt_word(int i) { return "t" + std::to_string(i); }
std::string src_entity(int j) { return "a" + std::to_string(j); }
std::string tgt_synonym(int j, int style) { return "y" + std::to_string(j) + "v" + std::to_string(style); }
std::string src_marker(int c) { return "m" + std::to_string(c); }
std::string tgt_marker(int c) { return "n" + std::to_string(c); }

Template draw_template(const SyntheticSpec& spec, Rng& rng, int num_sents) {
  Template t;
  const bool ambiguous = spec.num_ambiguous > 0;
  if (ambiguous) t.entity = rng.range(0, spec.num_ambiguous - 1);
  for (int s = 0; s < num_sents; ++s) {
    const int len = rng.range(spec.min_len, spec.max_len);
    std::vector<Token> sent;
    for (int i = 0; i < len; ++i) sent.push_back({Slot::kWord, rng.range(0, spec.base_vocab - 1)});
    if (ambiguous && rng.bernoulli(spec.ambiguous_rate)) {
      const int pos = rng.range(0, len - 1);
      sent[static_cast<std::size_t>(pos)] = {Slot::kEntity, 0};
      if (rng.bernoulli(spec.cue_rate)) {
        // Adjacent to the entity, so the cue sits where the decoder attends.
        const int mpos = pos + 1 < len ? pos + 1 : pos - 1;
        const int offset = rng.bernoulli(spec.cue_fidelity) ? 0 : rng.range(1, spec.synonyms - 1);
        sent[static_cast<std::size_t>(mpos)] = {Slot::kMarker, offset};
      }
    }
    t.sentences.push_back(std::move(sent));
  }
  return t;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

Document render(const SyntheticSpec& spec, const Lexicon& lex, const Template& t, int style, std::string doc_id) {
  Document doc;
  doc.doc_id = std::move(doc_id);
  const int k = std::max(1, spec.synonyms);
  for (const auto& sent : t.sentences) {
    std::vector<std::string> src, ref;
    for (const Token& tok : sent) {
      switch (tok.slot) {
        case Slot::kWord:
          src.push_back(src_word(tok.value));
          ref.push_back(tgt_word(lex.target_of[static_cast<std::size_t>(tok.value)]));
          break;
        case Slot::kEntity:
          src.push_back(src_entity(t.entity));
          ref.push_back(tgt_synonym(t.entity, style));
          break;
        case Slot::kMarker: {
          const int marker = (style + tok.value) % k;
          src.push_back(src_marker(marker));
          ref.push_back(tgt_marker(marker));
          break;
        }
      }
    }
    doc.src.push_back(join(src));
    doc.ref.push_back(join(ref));
  }
  return doc;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CorpusError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw CorpusError("cannot write " + p.string());
  out << content;
}

}  // namespace

void Document::validate() const {
  if (src.empty()) throw CorpusError("document " + doc_id + " has no sentences");
  if (!ref.empty() && ref.size() != src.size()) {
    throw CorpusError("document " + doc_id + " has " + std::to_string(src.size()) + " sources but " +
                      std::to_string(ref.size()) + " references");
  }
}

void SyntheticSpec::validate() const {
  if (base_vocab < 1) throw CorpusError("synthetic spec: base_vocab must be >= 1");
  if (num_ambiguous < 0) throw CorpusError("synthetic spec: num_ambiguous must be >= 0");
  if (num_ambiguous > 0 && synonyms < 2) throw CorpusError("synthetic spec: synonyms must be >= 2");
  if (min_len < 1 || max_len < min_len) throw CorpusError("synthetic spec: empty sentence length range");
  if (min_sents < 1 || max_sents < min_sents) throw CorpusError("synthetic spec: empty sentences-per-document range");
  for (double r : {ambiguous_rate, cue_rate, cue_fidelity}) {
    if (!(r >= 0 && r <= 1)) throw CorpusError("synthetic spec: rates must lie in [0, 1]");
  }
  if (num_ambiguous > 0 && ambiguous_rate > 0 && cue_rate > 0 && min_len < 2) {
    throw CorpusError("synthetic spec: markers need sentences of at least two tokens");
  }
  if (train_docs < 0 || dev_docs < 0 || test_docs < 0) throw CorpusError("synthetic spec: document counts must be >= 0");
}

void to_json(json& j, const SyntheticSpec& s) {
  j = json{{"base_vocab", s.base_vocab},     {"num_ambiguous", s.num_ambiguous}, {"synonyms", s.synonyms},
           {"min_len", s.min_len},           {"max_len", s.max_len},             {"min_sents", s.min_sents},
           {"max_sents", s.max_sents},       {"ambiguous_rate", s.ambiguous_rate}, {"cue_rate", s.cue_rate},
           {"cue_fidelity", s.cue_fidelity}, {"train_docs", s.train_docs},       {"dev_docs", s.dev_docs},
           {"test_docs", s.test_docs},       {"seed", s.seed}};
}

void from_json(const json& j, SyntheticSpec& s) {
  s.base_vocab = j.value("base_vocab", s.base_vocab);
  s.num_ambiguous = j.value("num_ambiguous", s.num_ambiguous);
  s.synonyms = j.value("synonyms", s.synonyms);
  s.min_len = j.value("min_len", s.min_len);
  s.max_len = j.value("max_len", s.max_len);
  s.min_sents = j.value("min_sents", s.min_sents);
  s.max_sents = j.value("max_sents", s.max_sents);
  s.ambiguous_rate = j.value("ambiguous_rate", s.ambiguous_rate);
  s.cue_rate = j.value("cue_rate", s.cue_rate);
  s.cue_fidelity = j.value("cue_fidelity", s.cue_fidelity);
  s.train_docs = j.value("train_docs", s.train_docs);
  s.dev_docs = j.value("dev_docs", s.dev_docs);
  s.test_docs = j.value("test_docs", s.test_docs);
  s.seed = j.value("seed", s.seed);
}

ParallelDocCorpus generate_documents(const SyntheticSpec& spec, int count, std::uint64_t doc_seed,
                                     const std::string& id_prefix) {
  spec.validate();
  const Lexicon lex = make_lexicon(spec);
  Rng rng = Rng::derive(spec.seed, doc_seed);
  ParallelDocCorpus corpus;
  corpus.meta = {{"generator", spec}, {"doc_seed", doc_seed}};
  for (int d = 0; d < count; ++d) {
    const int style = spec.num_ambiguous > 0 ? rng.range(0, spec.synonyms - 1) : 0;
    const int sents = rng.range(spec.min_sents, spec.max_sents);
    const Template t = draw_template(spec, rng, sents);
    corpus.docs.push_back(render(spec, lex, t, style, id_prefix + std::to_string(d)));
  }
  return corpus;
}

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const Lexicon lex = make_lexicon(spec);
  SyntheticCorpus out;

  // Training documents come in groups that share one template rendered in
  // every style, so each synonym is exactly equally frequent.
  const int styles = spec.num_ambiguous > 0 ? spec.synonyms : 1;
  const int groups = spec.train_docs > 0 ? std::max(1, spec.train_docs / styles) : 0;
  Rng rng = Rng::derive(spec.seed, 4);
  ParallelDocCorpus train_docs;
  for (int g = 0; g < groups; ++g) {
    const Template t = draw_template(spec, rng, rng.range(spec.min_sents, spec.max_sents));
    for (int style = 0; style < styles; ++style) {
      train_docs.docs.push_back(render(spec, lex, t, style, "train-" + std::to_string(g * styles + style)));
    }
  }
  out.train = split_sentences_for_training(train_docs, Rng::derive(spec.seed, 5).next_u64());
  out.dev = generate_documents(spec, spec.dev_docs, 2, "dev-");
  out.test = generate_documents(spec, spec.test_docs, 3, "test-");
  // Types that can never occur are left out of the table.
  const int listed = spec.ambiguous_rate > 0 ? spec.num_ambiguous : 0;
  for (int j = 0; j < listed; ++j) {
    auto& syns = out.ambiguity[src_entity(j)];
    for (int c = 0; c < spec.synonyms; ++c) syns.push_back(tgt_synonym(j, c));
  }
  return out;
}

std::string to_jsonl(const ParallelDocCorpus& corpus) {
  std::string out;
  for (const auto& doc : corpus.docs) {
    json j = {{"doc_id", doc.doc_id}, {"src", doc.src}};
    if (doc.has_refs()) j["ref"] = doc.ref;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

ParallelDocCorpus parse_jsonl(const std::string& text) {
  ParallelDocCorpus corpus;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Document doc;
    try {
      const json j = json::parse(line);
      doc.doc_id = j.at("doc_id").get<std::string>();
      doc.src = j.at("src").get<std::vector<std::string>>();
      if (j.contains("ref") && !j.at("ref").is_null()) doc.ref = j.at("ref").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw CorpusError("line " + std::to_string(lineno) + ": " + e.what());
    }
    doc.validate();
    corpus.docs.push_back(std::move(doc));
  }
  return corpus;
}

ParallelDocCorpus load_jsonl(const fs::path& path) { return parse_jsonl(read_file(path)); }

void save_jsonl(const fs::path& path, const ParallelDocCorpus& corpus) { write_file(path, to_jsonl(corpus)); }

std::vector<TextPair> load_tsv(const fs::path& path) {
  std::istringstream is(read_file(path));
  std::vector<TextPair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw CorpusError(path.string() + ":" + std::to_string(lineno) + ": expected exactly one tab");
    }
    pairs.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return pairs;
}

void save_tsv(const fs::path& path, const std::vector<TextPair>& pairs) {
  std::string out;
  for (const auto& [s, r] : pairs) out += s + "\t" + r + "\n";
  write_file(path, out);
}

AmbiguityTable load_ambiguity(const fs::path& path) {
  try {
    return json::parse(read_file(path)).get<AmbiguityTable>();
  } catch (const json::exception& e) {
    throw CorpusError("malformed ambiguity table " + path.string() + ": " + e.what());
  }
}

void save_ambiguity(const fs::path& path, const AmbiguityTable& table) {
  write_file(path, json(table).dump(1) + "\n");
}

std::vector<TextPair> split_sentences_for_training(const ParallelDocCorpus& corpus, std::uint64_t seed) {
  std::vector<TextPair> pairs;
  for (const auto& doc : corpus.docs) {
    if (!doc.has_refs()) throw CorpusError("document " + doc.doc_id + " has no references to train on");
    for (std::size_t i = 0; i < doc.src.size(); ++i) pairs.emplace_back(doc.src[i], doc.ref[i]);
  }
  Rng rng(seed);
  rng.shuffle(pairs);
  return pairs;
}

}  // namespace docmt
