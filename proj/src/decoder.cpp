#include "docmt/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace docmt {

std::vector<int> SearchResult::content(int eos) const {
  std::vector<int> out = tokens;
  if (!out.empty() && out.back() == eos) out.pop_back();
  return out;
}

double length_penalty(std::size_t length, double alpha) {
  return std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

SearchResult greedy_search(const StepFunction& step, int max_len, int bos, int eos) {
  if (max_len < 1) throw std::invalid_argument("greedy_search: max_len must be >= 1");
  std::vector<int> prefix{bos};
  SearchResult result;
  for (int t = 0; t < max_len; ++t) {
    const auto lps = step({prefix});
    const auto& lp = lps.at(0);
    std::size_t best = 0;
    for (std::size_t v = 1; v < lp.size(); ++v) {
      if (lp[v] > lp[best]) best = v;
    }
    const int token = static_cast<int>(best);
    prefix.push_back(token);
    result.logprob += lp[best];
    if (token == eos) break;
  }
  result.tokens.assign(prefix.begin() + 1, prefix.end());
  result.score = result.logprob;
  return result;
}

SearchResult beam_search(const StepFunction& step, const SearchSettings& s) {
  if (s.beam_size < 1) throw std::invalid_argument("beam_search: beam_size must be >= 1");
  if (s.max_len < 1) throw std::invalid_argument("beam_search: max_len must be >= 1");
  if (s.length_penalty < 0) throw std::invalid_argument("beam_search: length penalty alpha must be >= 0");
  const auto beam = static_cast<std::size_t>(s.beam_size);
  // With alpha >= 0 the penalty grows with length, so dividing an alive
  // log-probability by the penalty at max_len bounds anything it can reach.
  const double max_penalty = length_penalty(static_cast<std::size_t>(s.max_len), s.length_penalty);

  struct Candidate {
    double logprob;
    int token;
    std::size_t parent;
  };

  std::vector<Hypothesis> alive{Hypothesis{{s.bos}, 0.0, false}};
  Hypothesis best_finished;
  double best_score = -std::numeric_limits<double>::infinity();
  bool have_finished = false;

  for (int t = 1; t <= s.max_len && !alive.empty(); ++t) {
    std::vector<std::vector<int>> prefixes;
    prefixes.reserve(alive.size());
    for (const auto& h : alive) prefixes.push_back(h.tokens);
    const auto lps = step(prefixes);

    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < alive.size(); ++i) {
      for (std::size_t v = 0; v < lps[i].size(); ++v) {
        cands.push_back({alive[i].logprob + static_cast<double>(lps[i][v]), static_cast<int>(v), i});
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.logprob != b.logprob) return a.logprob > b.logprob;
      if (a.token != b.token) return a.token < b.token;
      return a.parent < b.parent;
    });

    const bool last_step = t == s.max_len;
    auto extend = [&](const Candidate& c, bool finished) {
      Hypothesis h{alive[c.parent].tokens, c.logprob, finished};
      h.tokens.push_back(c.token);
      return h;
    };

    for (std::size_t r = 0; r < std::min(beam, cands.size()); ++r) {
      const Candidate& c = cands[r];
      if (c.token != s.eos && !last_step) continue;
      const double score = c.logprob / length_penalty(static_cast<std::size_t>(t), s.length_penalty);
      if (!have_finished || score > best_score) {
        best_finished = extend(c, true);
        best_score = score;
        have_finished = true;
      }
    }

    std::vector<Hypothesis> next;
    if (!last_step) {
      for (const Candidate& c : cands) {
        if (next.size() == beam) break;
        if (c.token != s.eos) next.push_back(extend(c, false));
      }
    }
    alive = std::move(next);

    if (have_finished && !alive.empty()) {
      const double bound = alive.front().logprob / max_penalty;
      if (bound <= best_score) break;
    }
  }

  SearchResult result;
  result.tokens.assign(best_finished.tokens.begin() + 1, best_finished.tokens.end());
  result.logprob = best_finished.logprob;
  result.score = best_score;
  return result;
}

StepFunction model_step_function(const ModelParams& params, const SourceEncoding& enc) {
  return [&params, &enc](const std::vector<std::vector<int>>& prefixes) { return decode_step(params, enc, prefixes); };
}

namespace {

int capped_max_len(const ModelParams& params, int max_len) {
  return std::max(1, std::min(max_len, params.config.max_positions - 1));
}

}  // namespace

SearchResult greedy_decode(const ModelParams& params, std::span<const int> src, int max_len) {
  const SourceEncoding enc = encode_source(params, src);
  return greedy_search(model_step_function(params, enc), capped_max_len(params, max_len));
}

SearchResult beam_decode(const ModelParams& params, std::span<const int> src, const SearchSettings& settings) {
  const SourceEncoding enc = encode_source(params, src);
  SearchSettings s = settings;
  s.max_len = capped_max_len(params, s.max_len);
  return beam_search(model_step_function(params, enc), s);
}

}  // namespace docmt
