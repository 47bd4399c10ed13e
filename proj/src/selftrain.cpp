#include "docmt/selftrain.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <stdexcept>
#include <thread>

#include "docmt/rng.hpp"

namespace docmt {

std::string mode_name(DecodeMode mode) {
  switch (mode) {
    case DecodeMode::kBaseline:
      return "baseline";
    case DecodeMode::kSelfTrain:
      return "selftrain";
    case DecodeMode::kOracle:
      return "oracle";
  }
  throw std::invalid_argument("mode_name: bad mode");
}

DecodeMode parse_mode(const std::string& name) {
  if (name == "baseline") return DecodeMode::kBaseline;
  if (name == "selftrain") return DecodeMode::kSelfTrain;
  if (name == "oracle") return DecodeMode::kOracle;
  throw std::invalid_argument("unknown decode mode '" + name + "' (expected baseline, selftrain or oracle)");
}

void to_json(nlohmann::json& j, const DecodeSettings& s) {
  j = nlohmann::json{{"beam_size", s.beam_size},
                     {"length_penalty", s.length_penalty},
                     {"max_len_extra", s.max_len_extra},
                     {"adapt_dropout", s.adapt_dropout},
                     {"adapt_smoothing", s.adapt_smoothing},
                     {"token_mean", s.token_mean},
                     {"recapture_prior_per_pass", s.recapture_prior_per_pass},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, DecodeSettings& s) {
  DecodeSettings d;
  s.beam_size = j.value("beam_size", d.beam_size);
  s.length_penalty = j.value("length_penalty", d.length_penalty);
  s.max_len_extra = j.value("max_len_extra", d.max_len_extra);
  s.adapt_dropout = j.value("adapt_dropout", d.adapt_dropout);
  s.adapt_smoothing = j.value("adapt_smoothing", d.adapt_smoothing);
  s.token_mean = j.value("token_mean", d.token_mean);
  s.recapture_prior_per_pass = j.value("recapture_prior_per_pass", d.recapture_prior_per_pass);
  s.seed = j.value("seed", d.seed);
}

const std::vector<std::string>& DecodeResult::translations() const {
  static const std::vector<std::string> kEmpty;
  return pass_translations.empty() ? kEmpty : pass_translations.back();
}

nlohmann::json result_to_json(const DecodeResult& r) {
  nlohmann::json j{{"doc_id", r.doc_id},
                   {"mode", mode_name(r.mode)},
                   {"passes", r.adapt.passes},
                   {"alpha", r.adapt.alpha},
                   {"lambda", r.adapt.lambda},
                   {"steps", r.adapt.steps},
                   {"translations", r.translations()},
                   {"logprobs", r.logprobs}};
  if (!r.ok()) j["error"] = r.error;
  return j;
}

DecodeResult result_from_json(const nlohmann::json& j) {
  DecodeResult r;
  r.doc_id = j.at("doc_id").get<std::string>();
  r.mode = parse_mode(j.at("mode").get<std::string>());
  r.adapt.passes = std::max(1, j.at("passes").get<int>());
  r.adapt.alpha = j.at("alpha").get<double>();
  r.adapt.lambda = j.at("lambda").get<double>();
  r.adapt.steps = j.at("steps").get<int>();
  r.adapt.oracle = r.mode == DecodeMode::kOracle;
  r.pass_translations.push_back(j.at("translations").get<std::vector<std::string>>());
  r.logprobs = j.at("logprobs").get<std::vector<double>>();
  if (j.contains("seconds")) r.seconds = j.at("seconds").get<std::vector<double>>();
  r.error = j.value("error", std::string());
  return r;
}

namespace {

using Clock = std::chrono::steady_clock;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

std::vector<std::vector<int>> encode_all(const BpeModel& bpe, const std::vector<std::string>& sentences) {
  std::vector<std::vector<int>> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) out.push_back(bpe.encode(normalize_text(s)));
  return out;
}

SearchSettings search_settings(const DecodeSettings& s, std::size_t src_len) {
  SearchSettings ss;
  ss.beam_size = s.beam_size;
  ss.length_penalty = s.length_penalty;
  ss.max_len = static_cast<int>(src_len) + s.max_len_extra;
  return ss;
}

void adapt_on(ModelParams& params, std::span<const int> src, std::span<const int> tgt, const AdaptConfig& adapt,
              const DecodeSettings& settings, Rng& rng) {
  for (int k = 0; k < adapt.steps; ++k) {
    params.zero_grad();
    Tensor loss = forward_loss(params, src, tgt, static_cast<Real>(settings.adapt_smoothing), settings.adapt_dropout, &rng);
    // Token sum instead of the mean: the mean runs over |tgt| + 1 positions.
    if (!settings.token_mean) loss = scale(loss, static_cast<Real>(tgt.size() + 1));
    backward(loss);
    decay_prior_step(params, adapt.alpha, adapt.lambda, adapt.freeze);
  }
}

// One left-to-right sweep. Fills translations/logprobs/seconds for the pass.
void run_pass(Translator& tr, const std::vector<std::vector<int>>& src_ids, const std::vector<std::vector<int>>* targets,
              const AdaptConfig& adapt, const DecodeSettings& settings, Rng& rng, DecodeResult& out) {
  std::vector<std::string> translations;
  out.logprobs.clear();
  out.seconds.clear();
  for (std::size_t i = 0; i < src_ids.size(); ++i) {
    const auto t0 = Clock::now();
    try {
      const SearchResult res = beam_decode(tr.params, src_ids[i], search_settings(settings, src_ids[i].size()));
      const std::vector<int> ids = res.content();
      std::string text = tr.tgt_bpe.decode(ids);
      const std::vector<int>& target = targets ? (*targets)[i] : ids;
      // Empty targets teach nothing but a bare EOS; skip the update.
      if (!target.empty()) adapt_on(tr.params, src_ids[i], target, adapt, settings, rng);
      translations.push_back(std::move(text));
      out.logprobs.push_back(res.logprob);
    } catch (const std::exception& e) {
      throw std::runtime_error("sentence " + std::to_string(i) + ": " + e.what());
    }
    out.seconds.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
  }
  out.pass_translations.push_back(std::move(translations));
}

DecodeResult start_result(const Document& doc, DecodeMode mode, const AdaptConfig& adapt) {
  DecodeResult r;
  r.doc_id = doc.doc_id;
  r.mode = mode;
  r.adapt = adapt;
  return r;
}

void require_prior(const ModelParams& params) {
  if (!params.has_backup()) throw std::logic_error("self-training needs a prior: call ModelParams::backup() first");
}

}  // namespace

DecodeResult baseline_decode_document(const Translator& tr, const Document& doc, const DecodeSettings& settings) {
  doc.validate();
  DecodeResult r = start_result(doc, DecodeMode::kBaseline, AdaptConfig{});
  r.adapt.alpha = 0;
  r.adapt.lambda = 0;
  r.adapt.steps = 0;
  r.adapt.passes = 1;
  std::vector<std::string> translations;
  for (std::size_t i = 0; i < doc.src.size(); ++i) {
    const auto t0 = Clock::now();
    try {
      const auto src = tr.src_bpe.encode(normalize_text(doc.src[i]));
      const SearchResult res = beam_decode(tr.params, src, search_settings(settings, src.size()));
      translations.push_back(tr.tgt_bpe.decode(res.content()));
      r.logprobs.push_back(res.logprob);
    } catch (const std::exception& e) {
      throw std::runtime_error("sentence " + std::to_string(i) + ": " + e.what());
    }
    r.seconds.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
  }
  r.pass_translations.push_back(std::move(translations));
  return r;
}

DecodeResult selftrain_decode_document(Translator& tr, const Document& doc, const AdaptConfig& adapt,
                                       const DecodeSettings& settings) {
  AdaptConfig one = adapt;
  one.passes = 1;
  return multipass_decode(tr, doc, one, settings);
}

DecodeResult multipass_decode(Translator& tr, const Document& doc, const AdaptConfig& adapt,
                              const DecodeSettings& settings) {
  adapt.validate();
  if (adapt.oracle) return oracle_selftrain_decode_document(tr, doc, adapt, settings);
  doc.validate();
  require_prior(tr.params);
  DecodeResult r = start_result(doc, DecodeMode::kSelfTrain, adapt);
  const auto src_ids = encode_all(tr.src_bpe, doc.src);
  Rng rng = Rng::derive(settings.seed, fnv1a(doc.doc_id));
  for (int p = 0; p < adapt.passes; ++p) {
    if (p > 0 && settings.recapture_prior_per_pass) tr.params.backup();
    run_pass(tr, src_ids, nullptr, adapt, settings, rng, r);
  }
  return r;
}

DecodeResult oracle_selftrain_decode_document(Translator& tr, const Document& doc, const AdaptConfig& adapt,
                                              const DecodeSettings& settings) {
  AdaptConfig cfg = adapt;
  cfg.oracle = true;
  cfg.validate();
  doc.validate();
  if (!doc.has_refs()) throw std::invalid_argument("oracle decoding needs references for document " + doc.doc_id);
  require_prior(tr.params);
  DecodeResult r = start_result(doc, DecodeMode::kOracle, cfg);
  const auto src_ids = encode_all(tr.src_bpe, doc.src);
  const auto ref_ids = encode_all(tr.tgt_bpe, doc.ref);
  Rng rng = Rng::derive(settings.seed, fnv1a(doc.doc_id));
  run_pass(tr, src_ids, &ref_ids, cfg, settings, rng, r);
  return r;
}

std::vector<DecodeResult> decode_corpus(const Translator& tr, const std::vector<Document>& docs, DecodeMode mode,
                                        const AdaptConfig& adapt, const DecodeSettings& settings, int jobs) {
  if (jobs < 1) throw std::invalid_argument("decode_corpus: jobs must be >= 1");
  if (mode != DecodeMode::kBaseline) {
    AdaptConfig check = adapt;
    check.oracle = mode == DecodeMode::kOracle;
    check.validate();
  }
  std::vector<DecodeResult> results(docs.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&]() {
    Translator local{tr.src_bpe, tr.tgt_bpe, tr.params.deep_copy()};
    local.params.clear_backup();
    local.params.backup();
    for (std::size_t d = next++; d < docs.size(); d = next++) {
      try {
        local.params.restore();
        switch (mode) {
          case DecodeMode::kBaseline:
            results[d] = baseline_decode_document(local, docs[d], settings);
            break;
          case DecodeMode::kSelfTrain: {
            AdaptConfig cfg = adapt;
            cfg.oracle = false;
            results[d] = multipass_decode(local, docs[d], cfg, settings);
            break;
          }
          case DecodeMode::kOracle:
            results[d] = oracle_selftrain_decode_document(local, docs[d], adapt, settings);
            break;
        }
      } catch (const std::exception& e) {
        DecodeResult failed = start_result(docs[d], mode, adapt);
        failed.error = e.what();
        results[d] = std::move(failed);
      }
    }
  };

  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(jobs), std::max<std::size_t>(docs.size(), 1));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return results;
}

}  // namespace docmt
