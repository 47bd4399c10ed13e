#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "docmt/checkpoint.hpp"
#include "docmt/experiment.hpp"
#include "docmt/train.hpp"
#include "fixtures.hpp"

using namespace docmt;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("docmt_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Setup {
  Translator tr;
  std::vector<SentencePair> data;
  TrainConfig cfg;
};

Setup setup() {
  Setup s;
  s.cfg = fixture::tiny_train();
  const auto& corpus = fixture::tiny().corpus;
  s.tr = prepare_translator(corpus.train, s.cfg);
  s.data = encode_pairs(s.tr, corpus.train);
  return s;
}

}  // namespace

// ---- training ----

TEST(Trainer, BatchesArePureFunctionsOfStep) {
  auto s = setup();
  Trainer a(s.tr.params.deep_copy(), make_adam(s.cfg), s.data, s.cfg);
  Trainer b(s.tr.params.deep_copy(), make_adam(s.cfg), s.data, s.cfg);
  for (long step : {0L, 1L, 57L, 1000L}) {
    EXPECT_EQ(a.batch_indices(step), b.batch_indices(step));
    EXPECT_EQ(a.batch_indices(step).size(), static_cast<std::size_t>(s.cfg.batch_size));
  }
  EXPECT_NE(a.batch_indices(0), a.batch_indices(1));
}

TEST(Trainer, InitialLossNearUniform) {
  auto s = setup();
  s.cfg.smoothing = 0;
  Trainer t(s.tr.params.deep_copy(), make_adam(s.cfg), s.data, s.cfg);
  const double v = static_cast<double>(s.tr.params.config.tgt_vocab);
  EXPECT_NEAR(t.step(), std::log(v), 0.7);
}

TEST(Trainer, ResumeMatchesUnbrokenRun) {
  auto s = setup();
  Trainer full(s.tr.params.deep_copy(), make_adam(s.cfg), s.data, s.cfg);
  for (int i = 0; i < 6; ++i) full.step();

  Trainer first(s.tr.params.deep_copy(), make_adam(s.cfg), s.data, s.cfg);
  for (int i = 0; i < 5; ++i) first.step();
  const fs::path dir = scratch("resume");
  save_checkpoint(dir / "ckpt", first.params(), &first.adam());
  Checkpoint ck = load_checkpoint(dir / "ckpt");
  ASSERT_TRUE(ck.adam.has_value());
  EXPECT_TRUE(ck.params.values_equal(first.params()));
  Trainer resumed(std::move(ck.params), *ck.adam, s.data, s.cfg);
  EXPECT_EQ(resumed.steps_done(), 5);
  resumed.step();
  EXPECT_TRUE(resumed.params().values_equal(full.params()));
  EXPECT_EQ(resumed.adam().m, full.adam().m);
  EXPECT_EQ(resumed.adam().v, full.adam().v);
  fs::remove_all(dir);
}

TEST(TrainModel, WritesCheckpointsAndResumes) {
  auto cfg = fixture::tiny_train();
  cfg.steps = 30;
  cfg.eval_every = 10;
  cfg.eval_docs = 2;
  const auto& corpus = fixture::tiny().corpus;
  const fs::path dir = scratch("train_model");
  std::vector<long> seen;
  const auto log = train_model(corpus.train, corpus.dev, cfg, dir, {}, [&](const TrainLogRow& r) { seen.push_back(r.step); });
  EXPECT_EQ(log.size(), seen.size());
  const auto ckpts = list_checkpoints(dir);
  ASSERT_EQ(ckpts.size(), 3u);
  for (const char* f : {"src.bpe", "tgt.bpe", "train_config.json", "final.json", "final.bin", "train_log.csv"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const auto meta = load_checkpoint(ckpts[1]).meta;
  EXPECT_EQ(meta.at("step").get<long>(), 20);
  EXPECT_GE(meta.at("dev_bleu").get<double>(), 0.0);

  // Resuming at step 20 reproduces the final parameters of the full run.
  const fs::path dir2 = scratch("train_model_resume");
  for (const char* f : {"src.bpe", "tgt.bpe"}) fs::copy_file(dir / f, dir2 / f);
  train_model(corpus.train, corpus.dev, cfg, dir2, ckpts[1]);
  EXPECT_TRUE(load_translator(dir2 / "final").params.values_equal(load_translator(dir / "final").params));
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST(TrainModel, RejectsBadConfig) {
  auto cfg = fixture::tiny_train();
  cfg.steps = -1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = fixture::tiny_train();
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

// ---- experiment plumbing ----

TEST(ExperimentConfig, ParsesAndRejectsUnknownFields) {
  const fs::path dir = scratch("config");
  std::ofstream(dir / "ok.json") << R"({"adapt": {"alpha": 0.02, "lambda": 0.002, "steps": 4, "passes": 2},
                                        "seeds": [7, 8], "jobs": 2})";
  const auto c = load_experiment_config(dir / "ok.json");
  EXPECT_DOUBLE_EQ(c.adapt.alpha, 0.02);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{7, 8}));
  EXPECT_EQ(c.jobs, 2);
  EXPECT_EQ(c.train.model.model_width, 64);
  std::ofstream(dir / "bad.json") << R"({"adpat": {}})";
  try {
    load_experiment_config(dir / "bad.json");
    FAIL();
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("adpat"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_experiment_config(dir / "missing.json"), std::runtime_error);
  ExperimentConfig seeded;
  seeded.apply_seed(9);
  EXPECT_EQ(seeded.corpus.seed, 9u);
  EXPECT_EQ(seeded.train.seed, 9u);
  fs::remove_all(dir);
}

TEST(Search, SamplesInsideTheSpace) {
  SearchSpace space;
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const auto a = sample_adapt(space, rng);
    EXPECT_GE(a.alpha, space.alpha_min);
    EXPECT_LE(a.alpha, space.alpha_max);
    EXPECT_GE(a.lambda, space.lambda_min);
    EXPECT_LE(a.lambda, space.lambda_max);
    EXPECT_NO_THROW(a.validate());
  }
}

TEST(Search, BudgetOneGivesOneTrial) {
  const auto& t = fixture::tiny();
  ParallelDocCorpus dev;
  dev.docs.assign(t.corpus.dev.docs.begin(), t.corpus.dev.docs.begin() + 2);
  const auto out = random_search(t.tr, dev, &t.corpus.ambiguity, 1, 3, {});
  ASSERT_EQ(out.trials.size(), 1u);
  EXPECT_TRUE(out.best.has_value());
  const fs::path dir = scratch("search");
  write_trials_csv(dir / "trials.csv", out.trials);
  std::ifstream in(dir / "trials.csv");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 2);
  EXPECT_THROW(random_search(t.tr, dev, nullptr, 0, 3, {}), std::invalid_argument);
  fs::remove_all(dir);
}

TEST(Trends, SortedWithRankCorrelation) {
  const auto t = make_trend("len", {{"32", 32, 10, 13}, {"2", 2, 10, 10.5}, {"8", 8, 10, 11}});
  EXPECT_EQ(t.rows.front().label, "2");
  EXPECT_EQ(t.rows.back().label, "32");
  EXPECT_NEAR(t.spearman, 1.0, 1e-12);
  const auto flat = make_trend("same", {{"a", 1, 5, 5}, {"b", 2, 5, 5}});
  for (const auto& r : flat.rows) EXPECT_EQ(r.diff(), 0.0);
  EXPECT_THROW(make_trend("one", {{"a", 1, 5, 5}}), std::invalid_argument);
}

TEST(Evaluation, ResultsFileRoundTripAndWins) {
  const auto& t = fixture::tiny();
  const auto rs = decode_corpus(t.tr, t.corpus.test.docs, DecodeMode::kBaseline, {}, {});
  const fs::path dir = scratch("results");
  write_results_jsonl(dir / "r.jsonl", rs);
  const auto back = read_results_jsonl(dir / "r.jsonl");
  ASSERT_EQ(back.size(), rs.size());
  const auto e1 = evaluate(rs, t.corpus.test, &t.corpus.ambiguity);
  const auto e2 = evaluate(back, t.corpus.test, &t.corpus.ambiguity);
  EXPECT_EQ(e1.bleu.bleu, e2.bleu.bleu);
  EXPECT_EQ(e1.doc_bleu.size(), rs.size());
  EXPECT_EQ(doc_wins({1, 2, 3, 4}, {1, 3, 2, 0}), (std::pair<long, long>{2, 1}));
  fs::remove_all(dir);
}
