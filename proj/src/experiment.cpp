#include "docmt/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

namespace docmt {

namespace fs = std::filesystem;

void ExperimentConfig::apply_seed(std::uint64_t seed) {
  corpus.seed = seed;
  train.seed = seed;
  decode.seed = seed;
}

void ExperimentConfig::validate() const {
  corpus.validate();
  train.validate();
  adapt.validate();
  if (seeds.empty()) throw std::invalid_argument("config: seeds must not be empty");
  if (jobs < 1) throw std::invalid_argument("config: jobs must be >= 1");
  if (decode.beam_size < 1) throw std::invalid_argument("config: beam_size must be >= 1");
  if (decode.max_len_extra < 0) throw std::invalid_argument("config: max_len_extra must be >= 0");
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"corpus", c.corpus}, {"train", c.train}, {"adapt", c.adapt},
                     {"decode", c.decode}, {"seeds", c.seeds}, {"jobs", c.jobs}, {"out", c.out}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  static const std::set<std::string> known = {"corpus", "train", "adapt", "decode", "seeds", "jobs", "out"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw std::invalid_argument("config: unknown field '" + key + "'");
  }
  if (j.contains("corpus")) c.corpus = j.at("corpus").get<SyntheticSpec>();
  if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
  if (j.contains("adapt")) c.adapt = j.at("adapt").get<AdaptConfig>();
  if (j.contains("decode")) c.decode = j.at("decode").get<DecodeSettings>();
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("jobs")) c.jobs = j.at("jobs").get<int>();
  if (j.contains("out")) c.out = j.at("out").get<std::string>();
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  try {
    return nlohmann::json::parse(in).get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void to_json(nlohmann::json& j, const Evaluation& e) {
  j = nlohmann::json{{"bleu", e.bleu}, {"failed_docs", e.failed_docs}, {"doc_bleu", e.doc_bleu}};
  j["consistency"] = e.consistency ? nlohmann::json(*e.consistency) : nlohmann::json(nullptr);
}

Evaluation evaluate(const std::vector<DecodeResult>& results, const ParallelDocCorpus& corpus,
                    const AmbiguityTable* table) {
  if (results.size() != corpus.docs.size()) {
    throw std::invalid_argument("evaluate: " + std::to_string(results.size()) + " results for " +
                                std::to_string(corpus.docs.size()) + " documents");
  }
  Evaluation ev;
  std::vector<std::string> hyp, ref;
  std::vector<std::vector<std::string>> per_doc;
  for (std::size_t d = 0; d < corpus.docs.size(); ++d) {
    const Document& doc = corpus.docs[d];
    if (!doc.has_refs()) throw CorpusError("evaluate: document " + doc.doc_id + " has no references");
    if (results[d].doc_id != doc.doc_id) {
      throw std::invalid_argument("evaluate: result " + results[d].doc_id + " does not match document " + doc.doc_id);
    }
    std::vector<std::string> out = results[d].translations();
    if (!results[d].ok() || out.size() != doc.src.size()) {
      ++ev.failed_docs;
      out.assign(doc.src.size(), "");
    }
    hyp.insert(hyp.end(), out.begin(), out.end());
    ref.insert(ref.end(), doc.ref.begin(), doc.ref.end());
    ev.doc_bleu.push_back(corpus_bleu(out, {doc.ref}, 4, true).bleu);
    per_doc.push_back(std::move(out));
  }
  ev.bleu = corpus_bleu(hyp, {ref});
  if (table) ev.consistency = consistency_rate(per_doc, corpus, *table);
  return ev;
}

std::pair<long, long> doc_wins(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("doc_wins: series differ in length");
  long wa = 0, wb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] > b[i]) ++wa;
    if (b[i] > a[i]) ++wb;
  }
  return {wa, wb};
}

void write_results_jsonl(const fs::path& path, const std::vector<DecodeResult>& results) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : results) out << result_to_json(r).dump() << "\n";
}

void write_timing_jsonl(const fs::path& path, const std::vector<DecodeResult>& results) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : results) {
    double total = 0;
    for (double s : r.seconds) total += s;
    out << nlohmann::json{{"doc_id", r.doc_id}, {"seconds", r.seconds}, {"total", total}}.dump() << "\n";
  }
}

std::vector<DecodeResult> read_results_jsonl(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<DecodeResult> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(result_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

AdaptConfig sample_adapt(const SearchSpace& space, Rng& rng) {
  AdaptConfig c;
  c.alpha = std::exp(rng.uniform(std::log(space.alpha_min), std::log(space.alpha_max)));
  c.lambda = rng.uniform(space.lambda_min, space.lambda_max);
  c.steps = space.steps[rng.below(space.steps.size())];
  c.passes = space.passes[rng.below(space.passes.size())];
  return c;
}

namespace {

double dev_score(const std::vector<DecodeResult>& results, const ParallelDocCorpus& dev, const AmbiguityTable* table,
                 std::optional<double>* consistency) {
  for (const auto& r : results) {
    if (!r.ok()) throw std::runtime_error(r.doc_id + ": " + r.error);
  }
  Evaluation ev = evaluate(results, dev, table);
  if (consistency) *consistency = ev.consistency;
  return ev.bleu.bleu;
}

}  // namespace

SearchOutcome random_search(const Translator& tr, const ParallelDocCorpus& dev, const AmbiguityTable* table,
                            int budget, std::uint64_t seed, const DecodeSettings& settings, int jobs,
                            const SearchSpace& space) {
  if (budget < 1) throw std::invalid_argument("search budget must be >= 1");
  SearchOutcome out;
  out.baseline_bleu = dev_score(decode_corpus(tr, dev.docs, DecodeMode::kBaseline, AdaptConfig{}, settings, jobs), dev,
                                table, nullptr);
  Rng rng(seed);
  for (int t = 0; t < budget; ++t) {
    Trial trial;
    trial.index = t;
    trial.adapt = sample_adapt(space, rng);
    try {
      const auto results = decode_corpus(tr, dev.docs, DecodeMode::kSelfTrain, trial.adapt, settings, jobs);
      trial.dev_bleu = dev_score(results, dev, table, &trial.consistency);
      if (!out.best || trial.dev_bleu > out.trials[*out.best].dev_bleu) out.best = out.trials.size();
    } catch (const std::exception& e) {
      trial.error = e.what();
    }
    out.trials.push_back(std::move(trial));
  }
  return out;
}

void write_trials_csv(const fs::path& path, const std::vector<Trial>& trials) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(10);
  out << "trial,alpha,lambda,steps,passes,dev_bleu,consistency,error\n";
  for (const auto& t : trials) {
    out << t.index << "," << t.adapt.alpha << "," << t.adapt.lambda << "," << t.adapt.steps << "," << t.adapt.passes
        << ",";
    if (t.error.empty()) out << t.dev_bleu;
    out << ",";
    if (t.consistency) out << *t.consistency;
    std::string err = t.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out << "," << err << "\n";
  }
}

Trend make_trend(std::string name, std::vector<TrendRow> rows) {
  if (rows.size() < 2) throw std::invalid_argument("trend '" + name + "' needs at least two result sets");
  std::stable_sort(rows.begin(), rows.end(), [](const TrendRow& a, const TrendRow& b) { return a.x < b.x; });
  Trend t;
  t.name = std::move(name);
  std::vector<double> xs, ds;
  for (const auto& r : rows) {
    xs.push_back(r.x);
    ds.push_back(r.diff());
  }
  t.spearman = spearman(xs, ds);
  t.rows = std::move(rows);
  return t;
}

void write_trends_csv(const fs::path& path, const std::vector<Trend>& trends) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(10);
  out << "trend,label,x,baseline_bleu,selftrain_bleu,bleu_diff\n";
  for (const auto& t : trends) {
    for (const auto& r : t.rows) {
      out << t.name << "," << r.label << "," << r.x << "," << r.baseline_bleu << "," << r.selftrain_bleu << ","
          << r.diff() << "\n";
    }
  }
}

}  // namespace docmt
