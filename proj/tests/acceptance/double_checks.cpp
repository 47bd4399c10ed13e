// Built against the double-precision library.

#include <chrono>
#include <cmath>
#include <cstdio>

#include "../gradcheck.hpp"
#include "acceptance.hpp"
#include "docmt/optim.hpp"
#include "docmt/rng.hpp"

static_assert(sizeof(docmt::Real) == 8, "double_checks.cpp needs the double build");

namespace acceptance {

namespace {

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

}  // namespace

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  docmt::ModelConfig c;
  c.num_layers = 2;
  c.model_width = 16;
  c.num_heads = 2;
  c.ffn_width = 32;
  c.src_vocab = 14;
  c.tgt_vocab = 12;
  docmt::ModelParams params = docmt::init_model(c, 11);
  const std::vector<docmt::SentencePair> pairs{{{4, 5, 6, 7}, {8, 9}}, {{10, 4}, {5, 6, 11, 9}}, {{13}, {4}}};
  const auto report = gradcheck::check_model(params, docmt::make_batch(pairs), 0.1);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Outcome o;
  o.pass = report.max_rel_error < 1e-4 && secs < 120 && report.checked == params.parameter_count();
  o.detail = fmt("max relative error %.3g over %.0f parameters in %.1f s", report.max_rel_error,
                 static_cast<double>(report.checked), secs) +
             " (worst " + report.worst_param + ")";
  return o;
}

Outcome decay_contraction() {
  // With zero gradient each step maps theta - prior to (1 - lambda) times itself.
  // Factors stay above 1e-3 so double rounding of theta does not dominate.
  docmt::ModelConfig c;
  c.num_layers = 1;
  c.model_width = 16;
  c.num_heads = 2;
  c.ffn_width = 32;
  c.src_vocab = 10;
  c.tgt_vocab = 10;
  double worst = 0;
  docmt::Rng rng(5);
  for (double lambda : {0.001, 0.05, 0.3, 0.5}) {
    for (int m : {1, 2, 4, 8}) {
      docmt::ModelParams p = docmt::init_model(c, 3);
      p.backup();
      for (auto& [name, t] : p.tensors) {
        for (auto& x : t.data()) x += rng.uniform(-1.0, 1.0);
      }
      const docmt::ModelParams start = p.deep_copy();
      for (int k = 0; k < m; ++k) {
        p.zero_grad();
        docmt::decay_prior_step(p, 0.5, lambda);
      }
      const double want = std::pow(1 - lambda, m);
      for (const auto& [name, t] : p.tensors) {
        const auto& prior = p.backup_of(name);
        const auto s = start.at(name).data();
        const auto now = t.data();
        for (std::size_t i = 0; i < now.size(); ++i) {
          const double d0 = s[i] - prior[i];
          if (std::fabs(d0) < 1e-3) continue;
          const double ratio = (now[i] - prior[i]) / d0;
          worst = std::max(worst, std::fabs(ratio - want) / want);
        }
      }
    }
  }
  return {worst < 1e-6, fmt("max relative error of the contraction %.3g (lambda 0.001..0.5, m 1..8)", worst)};
}

}  // namespace acceptance
