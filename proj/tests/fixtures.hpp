#pragma once

#include "docmt/corpus.hpp"
#include "docmt/selftrain.hpp"
#include "docmt/train.hpp"

namespace fixture {

inline docmt::SyntheticSpec tiny_spec() {
  docmt::SyntheticSpec s;
  s.train_docs = 150;
  s.dev_docs = 6;
  s.test_docs = 12;
  s.min_sents = 3;
  s.max_sents = 5;
  s.ambiguous_rate = 0.5;
  return s;
}

inline docmt::TrainConfig tiny_train() {
  docmt::TrainConfig c;
  c.model.num_layers = 1;
  c.model.model_width = 32;
  c.model.num_heads = 2;
  c.model.ffn_width = 64;
  c.bpe_merges = 64;
  c.steps = 120;
  c.batch_size = 16;
  c.warmup_steps = 50;
  c.eval_every = 0;
  c.eval_docs = 3;
  return c;
}

/// A briefly trained model and its corpus, built once per test binary.
struct Tiny {
  docmt::SyntheticCorpus corpus;
  docmt::Translator tr;
};

inline const Tiny& tiny() {
  static const Tiny t = [] {
    Tiny out;
    out.corpus = docmt::generate_synthetic(tiny_spec());
    const auto cfg = tiny_train();
    out.tr = docmt::prepare_translator(out.corpus.train, cfg);
    docmt::Trainer trainer(out.tr.params, docmt::make_adam(cfg), docmt::encode_pairs(out.tr, out.corpus.train), cfg);
    for (long s = 0; s < cfg.steps; ++s) trainer.step();
    out.tr.params = trainer.params().deep_copy();
    return out;
  }();
  return t;
}

}  // namespace fixture
