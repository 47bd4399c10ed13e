#include "docmt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "docmt/bpe.hpp"

namespace docmt {

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, int> count_ngrams(const std::vector<std::string>& words, int n) {
  std::map<Ngram, int> counts;
  if (static_cast<int>(words.size()) < n) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= words.size(); ++i) {
    ++counts[Ngram(words.begin() + static_cast<std::ptrdiff_t>(i), words.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  }
  return counts;
}

std::vector<std::string> tokens(const std::string& s) { return split_words(normalize_text(s)); }

}  // namespace

std::string BleuReport::summary() const {
  char buf[256];
  std::string p;
  for (std::size_t i = 0; i < precisions.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s%.1f", i ? "/" : "", precisions[i] * 100.0);
    p += buf;
  }
  const double ratio = ref_len ? static_cast<double>(hyp_len) / static_cast<double>(ref_len) : 0.0;
  std::snprintf(buf, sizeof buf, "BLEU = %.2f, %s (BP=%.3f, ratio=%.3f, hyp_len=%zu, ref_len=%zu)", bleu, p.c_str(),
                brevity_penalty, ratio, hyp_len, ref_len);
  return buf;
}

void to_json(nlohmann::json& j, const BleuReport& r) {
  j = nlohmann::json{{"bleu", r.bleu},
                     {"precisions", r.precisions},
                     {"brevity_penalty", r.brevity_penalty},
                     {"hyp_len", r.hyp_len},
                     {"ref_len", r.ref_len},
                     {"summary", r.summary()}};
}

BleuReport corpus_bleu(const std::vector<std::string>& candidates, const std::vector<std::vector<std::string>>& references,
                       int max_n, bool smooth) {
  if (references.empty()) throw std::invalid_argument("corpus_bleu: no reference streams");
  if (max_n < 1) throw std::invalid_argument("corpus_bleu: max_n must be >= 1");
  for (const auto& stream : references) {
    if (stream.size() != candidates.size()) {
      throw std::invalid_argument("corpus_bleu: " + std::to_string(candidates.size()) + " candidates but a reference stream has " +
                                  std::to_string(stream.size()) + " sentences");
    }
  }
  std::vector<double> matches(static_cast<std::size_t>(max_n), 0), totals(static_cast<std::size_t>(max_n), 0);
  BleuReport report;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const auto hyp = tokens(candidates[s]);
    std::vector<std::vector<std::string>> refs;
    for (const auto& stream : references) refs.push_back(tokens(stream[s]));

    std::size_t best_len = refs[0].size();
    for (const auto& r : refs) {
      const auto diff = [&](std::size_t len) { return len > hyp.size() ? len - hyp.size() : hyp.size() - len; };
      if (diff(r.size()) < diff(best_len) || (diff(r.size()) == diff(best_len) && r.size() < best_len)) best_len = r.size();
    }
    report.hyp_len += hyp.size();
    report.ref_len += best_len;

    for (int n = 1; n <= max_n; ++n) {
      const auto hyp_counts = count_ngrams(hyp, n);
      std::map<Ngram, int> max_ref;
      for (const auto& r : refs) {
        for (const auto& [g, c] : count_ngrams(r, n)) max_ref[g] = std::max(max_ref[g], c);
      }
      for (const auto& [g, c] : hyp_counts) {
        auto it = max_ref.find(g);
        matches[static_cast<std::size_t>(n - 1)] += std::min(c, it == max_ref.end() ? 0 : it->second);
        totals[static_cast<std::size_t>(n - 1)] += c;
      }
    }
  }

  bool any_zero = false;
  double log_sum = 0;
  for (int n = 0; n < max_n; ++n) {
    double m = matches[static_cast<std::size_t>(n)];
    double t = totals[static_cast<std::size_t>(n)];
    if (smooth && n >= 1) {
      m += 1;
      t += 1;
    }
    const double p = t > 0 ? m / t : 0.0;
    report.precisions.push_back(p);
    if (p <= 0) {
      any_zero = true;
    } else {
      log_sum += std::log(p);
    }
  }
  if (report.hyp_len == 0) {
    report.brevity_penalty = 0;
  } else if (report.hyp_len < report.ref_len) {
    report.brevity_penalty = std::exp(1.0 - static_cast<double>(report.ref_len) / static_cast<double>(report.hyp_len));
  } else {
    report.brevity_penalty = 1.0;
  }
  report.bleu = any_zero ? 0.0 : 100.0 * report.brevity_penalty * std::exp(log_sum / max_n);
  return report;
}

std::optional<double> consistency_rate(const std::vector<std::vector<std::string>>& translations,
                                       const ParallelDocCorpus& corpus, const AmbiguityTable& table) {
  if (translations.size() != corpus.docs.size()) {
    throw std::invalid_argument("consistency_rate: translation and document counts differ");
  }
  std::size_t eligible = 0, consistent = 0;
  for (std::size_t d = 0; d < corpus.docs.size(); ++d) {
    const Document& doc = corpus.docs[d];
    if (translations[d].size() != doc.src.size()) {
      throw std::invalid_argument("consistency_rate: document " + doc.doc_id + " has a wrong number of translations");
    }
    std::map<std::string, int> occurrences;
    std::map<std::string, std::set<std::size_t>> sentences_with;
    for (std::size_t i = 0; i < doc.src.size(); ++i) {
      for (const auto& w : tokens(doc.src[i])) {
        if (table.contains(w)) {
          ++occurrences[w];
          sentences_with[w].insert(i);
        }
      }
    }
    bool has_repeat = false;
    bool ok = true;
    for (const auto& [type, count] : occurrences) {
      if (count < 2) continue;
      has_repeat = true;
      const auto& syns = table.at(type);
      std::set<std::string> used;
      for (std::size_t i : sentences_with[type]) {
        for (const auto& w : tokens(translations[d][i])) {
          if (std::find(syns.begin(), syns.end(), w) != syns.end()) used.insert(w);
        }
      }
      if (used.size() != 1) ok = false;
    }
    if (!has_repeat) continue;
    ++eligible;
    if (ok) ++consistent;
  }
  if (eligible == 0) return std::nullopt;
  return static_cast<double>(consistent) / static_cast<double>(eligible);
}

double binomial_sign_test(long wins_a, long wins_b) {
  if (wins_a < 0 || wins_b < 0 || wins_a + wins_b < 1) {
    throw std::invalid_argument("binomial_sign_test: need non-negative counts with at least one trial");
  }
  const long n = wins_a + wins_b;
  const double log_half_n = static_cast<double>(n) * std::log(0.5);
  auto log_pmf = [&](long k) {
    return std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(k) + 1) -
           std::lgamma(static_cast<double>(n - k) + 1) + log_half_n;
  };
  // Tail P(X <= m) for m = min(a, b); the distribution is symmetric.
  const long m = std::min(wins_a, wins_b);
  double tail = 0;
  for (long k = 0; k <= m; ++k) tail += std::exp(log_pmf(k));
  return std::min(1.0, 2.0 * tail);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need two equally long series (n >= 2)");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace docmt
