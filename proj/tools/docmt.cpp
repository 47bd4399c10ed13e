// docmt: corpus generation, training, decoding, hyperparameter search and
// trend reports for document-level self-training.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "docmt/checkpoint.hpp"
#include "docmt/corpus.hpp"
#include "docmt/experiment.hpp"
#include "docmt/metrics.hpp"
#include "docmt/selftrain.hpp"
#include "docmt/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace docmt;

namespace {

// Failure raised by the tool itself; `kind` becomes the error prefix tag.
struct ToolError : std::runtime_error {
  std::string kind;
  ToolError(std::string k, const std::string& msg) : std::runtime_error(msg), kind(std::move(k)) {}
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config (JSON)");
  cmd->add_option("--seed", c.seed, "seed for corpus, training and decoding");
  cmd->add_option("--jobs", c.jobs, "worker threads for document decoding")->check(CLI::PositiveNumber);
  cmd->add_option("--out", c.out, "output directory");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_experiment_config(c.config);
  if (c.seed) {
    cfg.apply_seed(*c.seed);
    cfg.seeds = {*c.seed};
  }
  if (c.jobs) cfg.jobs = *c.jobs;
  if (!c.out.empty()) cfg.out = c.out;
  return cfg;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ToolError("io", "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ToolError("io", "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ToolError("io", path.string() + ": " + e.what());
  }
}

void write_manifest(const fs::path& dir, const std::string& command, const ExperimentConfig& cfg, const json& args) {
  write_json(dir / "manifest.json", {{"command", command}, {"config", cfg}, {"args", args}});
}

fs::path prepare_out(const ExperimentConfig& cfg) {
  fs::path out = cfg.out;
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw ToolError("io", "cannot create " + out.string() + ": " + ec.message());
  return out;
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw ToolError("io", what + " not found: " + p.string());
}

ParallelDocCorpus load_docs(const fs::path& path, int limit) {
  require_file(path, "corpus");
  ParallelDocCorpus corpus = load_jsonl(path);
  if (limit > 0 && static_cast<std::size_t>(limit) < corpus.docs.size()) corpus.docs.resize(limit);
  if (corpus.docs.empty()) throw CorpusError(path.string() + ": no documents");
  return corpus;
}

std::optional<AmbiguityTable> load_table(const std::string& explicit_path, const fs::path& data) {
  fs::path p = explicit_path;
  if (p.empty()) {
    p = data.parent_path() / "ambig.json";
    if (!fs::exists(p)) return std::nullopt;
  }
  require_file(p, "ambiguity table");
  return load_ambiguity(p);
}

double mean_sentences(const ParallelDocCorpus& c) {
  std::size_t n = 0;
  for (const auto& d : c.docs) n += d.src.size();
  return c.docs.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(c.docs.size());
}

// ---- gen ----

int cmd_gen(const Common& common) {
  ExperimentConfig cfg = resolve(common);
  cfg.corpus.validate();
  const fs::path out = prepare_out(cfg);
  const SyntheticCorpus corpus = generate_synthetic(cfg.corpus);
  save_tsv(out / "train.tsv", corpus.train);
  save_jsonl(out / "dev.jsonl", corpus.dev);
  save_jsonl(out / "test.jsonl", corpus.test);
  save_ambiguity(out / "ambig.json", corpus.ambiguity);
  write_manifest(out, "gen", cfg, json::object());
  std::printf("wrote %zu training pairs, %zu dev and %zu test documents to %s\n", corpus.train.size(),
              corpus.dev.docs.size(), corpus.test.docs.size(), out.string().c_str());
  return 0;
}

// ---- train ----

struct TrainArgs {
  std::string data;
  std::string resume;
  std::optional<long> steps;
  std::optional<long> eval_every;
};

int cmd_train(const Common& common, const TrainArgs& a) {
  ExperimentConfig cfg = resolve(common);
  if (a.steps) cfg.train.steps = *a.steps;
  if (a.eval_every) cfg.train.eval_every = *a.eval_every;
  cfg.train.validate();
  const fs::path data = a.data;
  require_file(data / "train.tsv", "training pairs");
  require_file(data / "dev.jsonl", "dev corpus");
  if (!a.resume.empty()) {
    fs::path stem = a.resume;
    if (stem.extension() == ".json") stem.replace_extension();
    require_file(fs::path(stem.string() + ".json"), "checkpoint");
  }
  const auto train = load_tsv(data / "train.tsv");
  const auto dev = load_jsonl(data / "dev.jsonl");
  const fs::path out = prepare_out(cfg);
  write_manifest(out, "train", cfg, {{"data", a.data}, {"resume", a.resume}});
  const auto t0 = std::chrono::steady_clock::now();
  train_model(train, dev, cfg.train, out, a.resume, [&](const TrainLogRow& row) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (row.dev_bleu >= 0) {
      std::fprintf(stderr, "step %ld loss %.4f dev_bleu %.2f (%.0fs)\n", row.step, row.loss, row.dev_bleu, secs);
    } else {
      std::fprintf(stderr, "step %ld loss %.4f (%.0fs)\n", row.step, row.loss, secs);
    }
  });
  std::printf("final checkpoint: %s\n", (out / "final.json").string().c_str());
  return 0;
}

// ---- decode ----

struct DecodeArgs {
  std::string checkpoint;
  std::string data;
  std::string ambig;
  std::string mode = "baseline";
  bool oracle = false;
  std::optional<double> alpha, lambda, lenpen;
  std::optional<int> steps, passes, beam;
  int limit = 0;
};

json checkpoint_meta(const fs::path& checkpoint) {
  fs::path stem = checkpoint;
  if (stem.extension() == ".json") stem.replace_extension();
  require_file(fs::path(stem.string() + ".json"), "checkpoint");
  const json manifest = read_json(stem.string() + ".json");
  return manifest.value("meta", json::object());
}

int cmd_decode(const Common& common, const DecodeArgs& a) {
  ExperimentConfig cfg = resolve(common);
  const DecodeMode mode = a.oracle ? DecodeMode::kOracle : parse_mode(a.mode);
  if (a.oracle && a.mode != "baseline" && a.mode != "oracle") {
    throw std::invalid_argument("--oracle conflicts with --mode " + a.mode);
  }
  if (a.alpha) cfg.adapt.alpha = *a.alpha;
  if (a.lambda) cfg.adapt.lambda = *a.lambda;
  if (a.steps) cfg.adapt.steps = *a.steps;
  if (a.passes) cfg.adapt.passes = *a.passes;
  else if (mode == DecodeMode::kOracle) cfg.adapt.passes = 1;  // the only legal value
  if (a.beam) cfg.decode.beam_size = *a.beam;
  if (a.lenpen) cfg.decode.length_penalty = *a.lenpen;
  cfg.adapt.oracle = mode == DecodeMode::kOracle;
  if (mode != DecodeMode::kBaseline) cfg.adapt.validate();
  if (cfg.decode.beam_size < 1) throw std::invalid_argument("--beam must be >= 1");

  const json meta = checkpoint_meta(a.checkpoint);
  const ParallelDocCorpus corpus = load_docs(a.data, a.limit);
  const auto table = load_table(a.ambig, a.data);
  const Translator tr = load_translator(a.checkpoint);
  const fs::path out = prepare_out(cfg);
  write_manifest(out, "decode", cfg,
                 {{"checkpoint", a.checkpoint}, {"data", a.data}, {"mode", mode_name(mode)}, {"limit", a.limit}});

  const auto t0 = std::chrono::steady_clock::now();
  const auto results = decode_corpus(tr, corpus.docs, mode, cfg.adapt, cfg.decode, cfg.jobs);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_results_jsonl(out / "results.jsonl", results);
  write_timing_jsonl(out / "timing.jsonl", results);

  const Evaluation ev = evaluate(results, corpus, table ? &*table : nullptr);
  json metrics{{"mode", mode_name(mode)},
               {"adapt", cfg.adapt},
               {"checkpoint", a.checkpoint},
               {"checkpoint_step", meta.value("step", -1L)},
               {"checkpoint_dev_bleu", meta.value("dev_bleu", -1.0)},
               {"data", a.data},
               {"documents", corpus.docs.size()},
               {"mean_sentences", mean_sentences(corpus)},
               {"bleu", ev.bleu},
               {"bleu_summary", ev.bleu.summary()},
               {"consistency", ev.consistency ? json(*ev.consistency) : json(nullptr)},
               {"failed_docs", ev.failed_docs},
               {"doc_ids", json::array()},
               {"doc_bleu", ev.doc_bleu}};
  for (const auto& d : corpus.docs) metrics["doc_ids"].push_back(d.doc_id);
  write_json(out / "metrics.json", metrics);

  std::printf("%s: %s", mode_name(mode).c_str(), ev.bleu.summary().c_str());
  if (ev.consistency) std::printf(", consistency %.4f", *ev.consistency);
  std::printf(" [%zu docs, %.1fs]\n", corpus.docs.size(), secs);
  for (const auto& r : results) {
    if (!r.ok()) std::fprintf(stderr, "warning: document %s failed: %s\n", r.doc_id.c_str(), r.error.c_str());
  }
  return ev.failed_docs == corpus.docs.size() ? 1 : 0;
}

// ---- search ----

struct SearchArgs {
  std::string checkpoint;
  std::string data;
  std::string ambig;
  int budget = 20;
  int limit = 0;
};

int cmd_search(const Common& common, const SearchArgs& a) {
  ExperimentConfig cfg = resolve(common);
  if (a.budget < 1) throw std::invalid_argument("--budget must be >= 1");
  checkpoint_meta(a.checkpoint);
  const ParallelDocCorpus dev = load_docs(a.data, a.limit);
  const auto table = load_table(a.ambig, a.data);
  const Translator tr = load_translator(a.checkpoint);
  const fs::path out = prepare_out(cfg);
  write_manifest(out, "search", cfg,
                 {{"checkpoint", a.checkpoint}, {"data", a.data}, {"budget", a.budget}, {"limit", a.limit}});

  const SearchOutcome res = random_search(tr, dev, table ? &*table : nullptr, a.budget, cfg.seeds.front(),
                                          cfg.decode, cfg.jobs);
  write_trials_csv(out / "trials.csv", res.trials);
  json best{{"baseline_dev_bleu", res.baseline_bleu}, {"trials", res.trials.size()}};
  if (res.best) {
    const Trial& t = res.trials[*res.best];
    best["trial"] = t.index;
    best["adapt"] = t.adapt;
    best["dev_bleu"] = t.dev_bleu;
    best["consistency"] = t.consistency ? json(*t.consistency) : json(nullptr);
  } else {
    best["adapt"] = nullptr;
  }
  write_json(out / "best.json", best);
  for (const auto& t : res.trials) {
    if (!t.error.empty()) std::fprintf(stderr, "warning: trial %d skipped: %s\n", t.index, t.error.c_str());
  }
  if (!res.best) throw ToolError("search", "all " + std::to_string(a.budget) + " trials failed");
  const Trial& t = res.trials[*res.best];
  std::printf("baseline dev BLEU %.2f; best trial %d: alpha=%g lambda=%g steps=%d passes=%d dev BLEU %.2f\n",
              res.baseline_bleu, t.index, t.adapt.alpha, t.adapt.lambda, t.adapt.steps, t.adapt.passes, t.dev_bleu);
  return 0;
}

// ---- report ----

struct ReportArgs {
  std::vector<std::string> checkpoint_pairs;
  std::vector<std::string> length_pairs;
  std::vector<std::string> pairs;
};

struct ResultSet {
  fs::path dir;
  json metrics;
};

ResultSet load_result_set(const std::string& dir) {
  require_file(fs::path(dir) / "metrics.json", "metrics");
  return {dir, read_json(fs::path(dir) / "metrics.json")};
}

struct Pair {
  std::string spec;
  ResultSet base, self;
};

Pair parse_pair(const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == spec.size()) {
    throw std::invalid_argument("result pair must be BASELINE_DIR:SELFTRAIN_DIR, got '" + spec + "'");
  }
  Pair p{spec, load_result_set(spec.substr(0, colon)), load_result_set(spec.substr(colon + 1))};
  if (p.base.metrics.at("doc_ids") != p.self.metrics.at("doc_ids")) {
    throw std::invalid_argument("result pair '" + spec + "' covers different documents");
  }
  return p;
}

// All-tie comparisons carry no evidence either way.
double sign_p(long a, long b) { return a + b == 0 ? 1.0 : binomial_sign_test(a, b); }

double bleu_of(const ResultSet& r) { return r.metrics.at("bleu").at("bleu").get<double>(); }

int cmd_report(const Common& common, const ReportArgs& a) {
  ExperimentConfig cfg = resolve(common);
  if (a.checkpoint_pairs.empty() && a.length_pairs.empty() && a.pairs.empty()) {
    throw ToolError("insufficient-data", "report needs result pairs (--checkpoint-pair, --length-pair or --pair)");
  }
  std::vector<Pair> all;
  std::vector<Trend> trends;
  auto build = [&](const std::string& name, const std::vector<std::string>& specs, const char* x_field) {
    if (specs.empty()) return;
    if (specs.size() < 2) {
      throw ToolError("insufficient-data", "trend '" + name + "' needs at least two result pairs");
    }
    std::vector<TrendRow> rows;
    for (const auto& s : specs) {
      Pair p = parse_pair(s);
      TrendRow row;
      row.label = p.self.dir.filename().string();
      row.x = p.self.metrics.at(x_field).get<double>();
      row.baseline_bleu = bleu_of(p.base);
      row.selftrain_bleu = bleu_of(p.self);
      rows.push_back(row);
      all.push_back(std::move(p));
    }
    trends.push_back(make_trend(name, std::move(rows)));
  };
  build("checkpoint", a.checkpoint_pairs, "checkpoint_dev_bleu");
  build("length", a.length_pairs, "mean_sentences");
  for (const auto& s : a.pairs) all.push_back(parse_pair(s));

  const fs::path out = prepare_out(cfg);
  write_manifest(out, "report", cfg,
                 {{"checkpoint_pairs", a.checkpoint_pairs}, {"length_pairs", a.length_pairs}, {"pairs", a.pairs}});
  if (!trends.empty()) write_trends_csv(out / "trends.csv", trends);

  std::ostringstream text;
  json summary{{"trends", json::array()}, {"sign_tests", json::array()}};
  text.precision(6);
  for (const auto& t : trends) {
    text << "trend " << t.name << ": spearman(x, selftrain - baseline) = " << t.spearman << "\n";
    for (const auto& r : t.rows) {
      text << "  " << r.label << "  x=" << r.x << "  baseline=" << r.baseline_bleu << "  selftrain=" << r.selftrain_bleu
           << "  diff=" << r.diff() << "\n";
    }
    summary["trends"].push_back({{"name", t.name}, {"spearman", t.spearman}, {"rows", t.rows.size()}});
  }
  long pooled_self = 0, pooled_base = 0;
  for (const auto& p : all) {
    const auto wins = doc_wins(p.self.metrics.at("doc_bleu").get<std::vector<double>>(),
                               p.base.metrics.at("doc_bleu").get<std::vector<double>>());
    pooled_self += wins.first;
    pooled_base += wins.second;
    const double pv = sign_p(wins.first, wins.second);
    text << "sign test " << p.spec << ": selftrain wins " << wins.first << ", baseline wins " << wins.second
         << ", p = " << pv << "\n";
    summary["sign_tests"].push_back(
        {{"pair", p.spec}, {"selftrain_wins", wins.first}, {"baseline_wins", wins.second}, {"p_value", pv}});
  }
  const double pooled_p = sign_p(pooled_self, pooled_base);
  text << "pooled sign test: selftrain wins " << pooled_self << ", baseline wins " << pooled_base << ", p = " << pooled_p
       << "\n";
  summary["pooled"] = {{"selftrain_wins", pooled_self}, {"baseline_wins", pooled_base}, {"p_value", pooled_p}};
  {
    std::ofstream f(out / "summary.txt");
    f << text.str();
  }
  write_json(out / "summary.json", summary);
  std::fputs(text.str().c_str(), stdout);
  return 0;
}

int fail(const std::string& kind, const std::string& message) {
  std::string line = message;
  for (char& c : line) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::fprintf(stderr, "docmt-error[%s]: %s\n", kind.c_str(), line.c_str());
  return kind == "usage" ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Document-level translation with test-time self-training"};
  app.require_subcommand(1);

  Common common;
  TrainArgs train_args;
  DecodeArgs decode_args;
  SearchArgs search_args;
  ReportArgs report_args;

  auto* gen = app.add_subcommand("gen", "generate the synthetic corpus");
  add_common(gen, common);

  auto* train = app.add_subcommand("train", "train a sentence-level model");
  add_common(train, common);
  train->add_option("--data", train_args.data, "directory with train.tsv and dev.jsonl")->required();
  train->add_option("--resume", train_args.resume, "checkpoint to continue from");
  train->add_option("--train-steps", train_args.steps, "total optimizer steps");
  train->add_option("--eval-every", train_args.eval_every, "dev evaluation and checkpoint interval");

  auto* decode = app.add_subcommand("decode", "translate documents");
  add_common(decode, common);
  decode->add_option("--checkpoint", decode_args.checkpoint, "model checkpoint")->required();
  decode->add_option("--data", decode_args.data, "documents (JSON lines)")->required();
  decode->add_option("--ambig", decode_args.ambig, "ambiguity table (default: ambig.json next to --data)");
  decode->add_option("--mode", decode_args.mode, "baseline, selftrain or oracle");
  decode->add_flag("--oracle", decode_args.oracle, "same as --mode oracle");
  decode->add_option("--alpha", decode_args.alpha, "adaptation learning rate");
  decode->add_option("--lambda", decode_args.lambda, "decay rate toward the prior");
  decode->add_option("--steps", decode_args.steps, "update steps per sentence");
  decode->add_option("--passes", decode_args.passes, "passes over each document");
  decode->add_option("--beam", decode_args.beam, "beam size");
  decode->add_option("--lenpen", decode_args.lenpen, "length penalty exponent");
  decode->add_option("--limit", decode_args.limit, "decode only the first N documents");

  auto* search = app.add_subcommand("search", "random search over adaptation hyperparameters");
  add_common(search, common);
  search->add_option("--checkpoint", search_args.checkpoint, "model checkpoint")->required();
  search->add_option("--data", search_args.data, "dev documents (JSON lines)")->required();
  search->add_option("--ambig", search_args.ambig, "ambiguity table (default: ambig.json next to --data)");
  search->add_option("--budget", search_args.budget, "number of trials");
  search->add_option("--limit", search_args.limit, "use only the first N documents");

  auto* report = app.add_subcommand("report", "trend tables and sign tests over decode results");
  add_common(report, common);
  report->add_option("--checkpoint-pair", report_args.checkpoint_pairs,
                     "BASELINE_DIR:SELFTRAIN_DIR decoded with one checkpoint (repeatable)");
  report->add_option("--length-pair", report_args.length_pairs,
                     "BASELINE_DIR:SELFTRAIN_DIR for one document length (repeatable)");
  report->add_option("--pair", report_args.pairs, "extra BASELINE_DIR:SELFTRAIN_DIR for the sign test (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    if (*gen) return cmd_gen(common);
    if (*train) return cmd_train(common, train_args);
    if (*decode) return cmd_decode(common, decode_args);
    if (*search) return cmd_search(common, search_args);
    if (*report) return cmd_report(common, report_args);
  } catch (const ToolError& e) {
    return fail(e.kind, e.what());
  } catch (const CorpusError& e) {
    return fail("corpus", e.what());
  } catch (const CheckpointError& e) {
    return fail("checkpoint", e.what());
  } catch (const std::invalid_argument& e) {
    return fail("config", e.what());
  } catch (const std::exception& e) {
    return fail("runtime", e.what());
  }
  return fail("usage", "no command given");
}
