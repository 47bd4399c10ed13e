#include "docmt/train.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <regex>
#include <stdexcept>

#include "docmt/checkpoint.hpp"
#include "docmt/metrics.hpp"
#include "docmt/rng.hpp"

namespace docmt {

namespace fs = std::filesystem;

namespace {

// Stream ids under the training seed.
constexpr std::uint64_t kInitStream = 11;
constexpr std::uint64_t kEpochStream = 0x100000;
constexpr std::uint64_t kDropoutStream = 0x200000000ULL;

}  // namespace

void TrainConfig::validate() const {
  if (bpe_merges < 0) throw std::invalid_argument("bpe_merges must be >= 0");
  if (steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (smoothing < 0 || smoothing >= 1) throw std::invalid_argument("smoothing must be in [0, 1)");
  if (clip_norm <= 0) throw std::invalid_argument("clip_norm must be > 0");
  if (lr_scale <= 0) throw std::invalid_argument("lr_scale must be > 0");
  if (warmup_steps < 1) throw std::invalid_argument("warmup_steps must be >= 1");
  if (eval_every < 0) throw std::invalid_argument("eval_every must be >= 0");
  if (eval_docs < 0) throw std::invalid_argument("eval_docs must be >= 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"model", c.model},
                     {"bpe_merges", c.bpe_merges},
                     {"steps", c.steps},
                     {"batch_size", c.batch_size},
                     {"smoothing", c.smoothing},
                     {"clip_norm", c.clip_norm},
                     {"lr_scale", c.lr_scale},
                     {"warmup_steps", c.warmup_steps},
                     {"eval_every", c.eval_every},
                     {"eval_docs", c.eval_docs},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
  c.bpe_merges = j.value("bpe_merges", d.bpe_merges);
  c.steps = j.value("steps", d.steps);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.smoothing = j.value("smoothing", d.smoothing);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.lr_scale = j.value("lr_scale", d.lr_scale);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.eval_every = j.value("eval_every", d.eval_every);
  c.eval_docs = j.value("eval_docs", d.eval_docs);
  c.seed = j.value("seed", d.seed);
}

Trainer::Trainer(ModelParams params, AdamState adam, std::vector<SentencePair> data, const TrainConfig& config)
    : params_(std::move(params)), adam_(std::move(adam)), data_(std::move(data)), config_(config) {
  config_.validate();
  if (data_.empty()) throw std::invalid_argument("Trainer: no training pairs");
}

const std::vector<std::size_t>& Trainer::epoch_order(long epoch) const {
  if (epoch != cached_epoch_) {
    cached_order_.resize(data_.size());
    std::iota(cached_order_.begin(), cached_order_.end(), std::size_t{0});
    Rng rng = Rng::derive(config_.seed, kEpochStream + static_cast<std::uint64_t>(epoch));
    rng.shuffle(cached_order_);
    cached_epoch_ = epoch;
  }
  return cached_order_;
}

std::vector<std::size_t> Trainer::batch_indices(long step) const {
  const auto n = static_cast<long>(data_.size());
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(config_.batch_size));
  for (long b = 0; b < config_.batch_size; ++b) {
    const long pos = step * config_.batch_size + b;
    out.push_back(epoch_order(pos / n)[static_cast<std::size_t>(pos % n)]);
  }
  return out;
}

double Trainer::step() {
  const long s = adam_.step;
  std::vector<SentencePair> batch_pairs;
  for (std::size_t i : batch_indices(s)) batch_pairs.push_back(data_[i]);
  const Batch batch = make_batch(batch_pairs);

  Rng dropout_rng = Rng::derive(config_.seed, kDropoutStream + static_cast<std::uint64_t>(s));
  params_.zero_grad();
  Tensor loss = forward_loss(params_, batch, static_cast<Real>(config_.smoothing), true, &dropout_rng);
  const double value = loss.item();
  backward(loss);
  clip_grad_norm(params_, config_.clip_norm);
  adam_step(params_, adam_);
  return value;
}

AdamState make_adam(const TrainConfig& config) {
  AdamState a;
  a.lr_scale = config.lr_scale;
  a.warmup_steps = config.warmup_steps;
  return a;
}

Translator prepare_translator(const std::vector<TextPair>& train, const TrainConfig& config) {
  config.validate();
  if (train.empty()) throw std::invalid_argument("no training pairs");
  std::vector<std::string> src, tgt;
  for (const auto& [s, t] : train) {
    src.push_back(normalize_text(s));
    tgt.push_back(normalize_text(t));
  }
  Translator tr;
  tr.src_bpe = BpeModel::learn(src, config.bpe_merges);
  tr.tgt_bpe = BpeModel::learn(tgt, config.bpe_merges);
  ModelConfig mc = config.model;
  mc.src_vocab = static_cast<int>(tr.src_bpe.vocab_size());
  mc.tgt_vocab = static_cast<int>(tr.tgt_bpe.vocab_size());
  tr.params = init_model(mc, Rng::derive(config.seed, kInitStream).next_u64());
  return tr;
}

std::vector<SentencePair> encode_pairs(const Translator& tr, const std::vector<TextPair>& pairs) {
  std::vector<SentencePair> out;
  out.reserve(pairs.size());
  const auto limit = static_cast<std::size_t>(tr.params.config.max_positions) - 1;
  for (const auto& [s, t] : pairs) {
    auto src = tr.src_bpe.encode(normalize_text(s));
    auto tgt = tr.tgt_bpe.encode(normalize_text(t));
    if (src.size() > limit || tgt.size() > limit) {
      throw SequenceTooLong("training pair exceeds max_positions: \"" + s + "\"");
    }
    out.emplace_back(std::move(src), std::move(tgt));
  }
  return out;
}

namespace {

double dev_bleu(const Translator& tr, const ParallelDocCorpus& dev, int max_docs) {
  std::vector<Document> docs(dev.docs.begin(), dev.docs.begin() + std::min<std::ptrdiff_t>(max_docs, static_cast<std::ptrdiff_t>(dev.docs.size())));
  if (docs.empty()) return -1;
  const auto results = decode_corpus(tr, docs, DecodeMode::kBaseline, AdaptConfig{}, DecodeSettings{}, 1);
  std::vector<std::string> hyp, ref;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (!results[d].ok()) throw std::runtime_error("dev decode failed: " + results[d].error);
    for (std::size_t i = 0; i < docs[d].src.size(); ++i) {
      hyp.push_back(results[d].translations()[i]);
      ref.push_back(docs[d].ref.at(i));
    }
  }
  return corpus_bleu(hyp, {ref}).bleu;
}

std::string step_stem(long step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt-%07ld", step);
  return buf;
}

}  // namespace

std::vector<TrainLogRow> train_model(const std::vector<TextPair>& train, const ParallelDocCorpus& dev,
                                     const TrainConfig& config, const fs::path& dir, const fs::path& resume,
                                     const std::function<void(const TrainLogRow&)>& progress) {
  config.validate();
  fs::create_directories(dir);
  Translator tr;
  AdamState adam = make_adam(config);
  if (resume.empty()) {
    tr = prepare_translator(train, config);
    tr.src_bpe.save(dir / "src.bpe");
    tr.tgt_bpe.save(dir / "tgt.bpe");
  } else {
    tr = load_translator(resume);
    Checkpoint ck = load_checkpoint(resume);
    if (!ck.adam) throw CheckpointError("cannot resume: checkpoint has no optimizer state");
    adam = std::move(*ck.adam);
  }
  {
    std::ofstream out(dir / "train_config.json");
    out << nlohmann::json(config).dump(2) << "\n";
  }

  Trainer trainer(std::move(tr.params), std::move(adam), encode_pairs(tr, train), config);
  std::vector<TrainLogRow> log;
  const bool append = !resume.empty() && fs::exists(dir / "train_log.csv");
  std::ofstream csv(dir / "train_log.csv", append ? std::ios::app : std::ios::trunc);
  if (!append) csv << "step,loss,dev_bleu\n";

  auto emit = [&](const TrainLogRow& row) {
    log.push_back(row);
    csv << row.step << "," << row.loss << ",";
    if (row.dev_bleu >= 0) csv << row.dev_bleu;
    csv << "\n";
    csv.flush();
    if (progress) progress(row);
  };

  while (trainer.steps_done() < config.steps) {
    TrainLogRow row;
    row.loss = trainer.step();
    row.step = trainer.steps_done();
    const bool at_eval = config.eval_every > 0 && row.step % config.eval_every == 0;
    if (at_eval) {
      Translator view{tr.src_bpe, tr.tgt_bpe, trainer.params()};
      row.dev_bleu = dev_bleu(view, dev, config.eval_docs);
      save_checkpoint(dir / step_stem(row.step), trainer.params(), &trainer.adam(),
                      {{"step", row.step}, {"dev_bleu", row.dev_bleu}, {"loss", row.loss}});
    }
    if (at_eval || row.step % 100 == 0 || row.step == config.steps) emit(row);
  }
  double final_bleu = -1;
  if (!log.empty() && log.back().step == trainer.steps_done()) final_bleu = log.back().dev_bleu;
  if (final_bleu < 0 && config.eval_docs > 0) {
    Translator view{tr.src_bpe, tr.tgt_bpe, trainer.params()};
    final_bleu = dev_bleu(view, dev, config.eval_docs);
  }
  save_checkpoint(dir / "final", trainer.params(), &trainer.adam(),
                  {{"step", trainer.steps_done()}, {"dev_bleu", final_bleu}});
  return log;
}

Translator load_translator(const fs::path& checkpoint) {
  fs::path stem = checkpoint;
  if (stem.extension() == ".json" || stem.extension() == ".bin") stem.replace_extension();
  const fs::path dir = stem.parent_path().empty() ? fs::path(".") : stem.parent_path();
  Translator tr;
  tr.src_bpe = BpeModel::load(dir / "src.bpe");
  tr.tgt_bpe = BpeModel::load(dir / "tgt.bpe");
  tr.params = load_checkpoint(stem).params;
  if (static_cast<std::size_t>(tr.params.config.src_vocab) != tr.src_bpe.vocab_size() ||
      static_cast<std::size_t>(tr.params.config.tgt_vocab) != tr.tgt_bpe.vocab_size()) {
    throw CheckpointError("tokenizers in " + dir.string() + " do not match the checkpoint vocabulary sizes");
  }
  return tr;
}

std::vector<fs::path> list_checkpoints(const fs::path& dir) {
  static const std::regex pattern(R"(ckpt-(\d+)\.json)");
  std::vector<std::pair<long, fs::path>> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    std::smatch m;
    if (std::regex_match(name, m, pattern)) found.emplace_back(std::stol(m[1].str()), dir / ("ckpt-" + m[1].str()));
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (auto& [step, p] : found) out.push_back(p);
  return out;
}

}  // namespace docmt
