#include "docmt/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace docmt {

double warmup_lr(long step, int model_width, int warmup_steps) {
  if (step < 1) throw std::invalid_argument("warmup_lr: step must be >= 1");
  if (model_width <= 0 || warmup_steps <= 0) throw std::invalid_argument("warmup_lr: width and warmup must be positive");
  const double s = static_cast<double>(step);
  return std::pow(static_cast<double>(model_width), -0.5) *
         std::min(std::pow(s, -0.5), s * std::pow(static_cast<double>(warmup_steps), -1.5));
}

void adam_update(ModelParams& params, AdamState& state, double lr, const std::set<std::string>& freeze) {
  for (auto& [name, t] : params.tensors) {
    if (freeze.contains(name)) continue;
    if (!t.has_grad()) throw std::logic_error("adam_step: parameter " + name + " has no gradient");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (auto& [name, t] : params.tensors) {
    if (freeze.contains(name)) continue;
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != t.numel()) m.assign(t.numel(), Real(0));
    if (v.size() != t.numel()) v.assign(t.numel(), Real(0));
    auto data = t.data();
    auto grad = t.grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i];
      m[i] = static_cast<Real>(state.beta1 * m[i] + (1.0 - state.beta1) * g);
      v[i] = static_cast<Real>(state.beta2 * v[i] + (1.0 - state.beta2) * g * g);
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      data[i] = static_cast<Real>(data[i] - lr * m_hat / (std::sqrt(v_hat) + state.eps));
    }
  }
}

void adam_step(ModelParams& params, AdamState& state, const std::set<std::string>& freeze) {
  const double lr = state.lr_scale * warmup_lr(state.step + 1, params.config.model_width, state.warmup_steps);
  adam_update(params, state, lr, freeze);
}

double clip_grad_norm(ModelParams& params, double max_norm) {
  double total = 0;
  for (auto& [name, t] : params.tensors) {
    if (!t.has_grad()) continue;
    for (Real g : t.grad()) total += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(total);
  if (norm > max_norm && norm > 0) {
    const auto factor = static_cast<Real>(max_norm / norm);
    for (auto& [name, t] : params.tensors) {
      if (!t.has_grad()) continue;
      for (Real& g : t.grad()) g *= factor;
    }
  }
  return norm;
}

void AdaptConfig::validate() const {
  if (!(alpha >= 0)) throw std::invalid_argument("adapt config: alpha must be >= 0");
  if (!(lambda >= 0 && lambda < 1)) throw std::invalid_argument("adapt config: lambda must be in [0, 1)");
  if (steps < 1) throw std::invalid_argument("adapt config: steps must be >= 1");
  if (passes < 1) throw std::invalid_argument("adapt config: passes must be >= 1");
  if (oracle && passes > 1) {
    throw std::invalid_argument("adapt config: oracle self-training is single-pass; got passes=" + std::to_string(passes));
  }
}

void to_json(nlohmann::json& j, const AdaptConfig& c) {
  j = nlohmann::json{{"alpha", c.alpha}, {"lambda", c.lambda}, {"steps", c.steps},
                     {"passes", c.passes}, {"oracle", c.oracle}, {"freeze", c.freeze}};
}

void from_json(const nlohmann::json& j, AdaptConfig& c) {
  c.alpha = j.value("alpha", c.alpha);
  c.lambda = j.value("lambda", c.lambda);
  c.steps = j.value("steps", c.steps);
  c.passes = j.value("passes", c.passes);
  c.oracle = j.value("oracle", c.oracle);
  if (j.contains("freeze")) c.freeze = j.at("freeze").get<std::set<std::string>>();
}

void decay_prior_step(ModelParams& params, double alpha, double lambda, const std::set<std::string>& freeze) {
  if (!params.has_backup()) throw std::logic_error("decay_prior_step: parameters have no backup");
  const auto a = static_cast<Real>(alpha);
  const auto l = static_cast<Real>(lambda);
  for (auto& [name, t] : params.tensors) {
    if (freeze.contains(name)) continue;
    const auto& prior = params.backup_of(name);
    if (prior.size() != t.numel()) throw std::logic_error("decay_prior_step: backup shape mismatch for " + name);
    auto data = t.data();
    if (t.has_grad()) {
      auto grad = t.grad();
      for (std::size_t i = 0; i < data.size(); ++i) data[i] = data[i] - a * grad[i] + l * (prior[i] - data[i]);
    } else {
      for (std::size_t i = 0; i < data.size(); ++i) data[i] = data[i] + l * (prior[i] - data[i]);
    }
  }
}

}  // namespace docmt
