#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "docmt/model.hpp"

namespace docmt {

/// Inverse-square-root schedule with linear warmup:
///   width^-0.5 * min(step^-0.5, step * warmup^-1.5)
double warmup_lr(long step, int model_width, int warmup_steps);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double lr_scale = 1.0;
  int warmup_steps = 400;
  long step = 0;
  std::map<std::string, std::vector<Real>> m;
  std::map<std::string, std::vector<Real>> v;
};

/// One bias-corrected Adam update with an explicit learning rate. Every
/// non-frozen parameter must carry a gradient.
void adam_update(ModelParams& params, AdamState& state, double lr, const std::set<std::string>& freeze = {});

/// adam_update with lr = lr_scale * warmup_lr(step + 1, width, warmup).
void adam_step(ModelParams& params, AdamState& state, const std::set<std::string>& freeze = {});

/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(ModelParams& params, double max_norm);

struct AdaptConfig {
  double alpha = 0.005;
  double lambda = 0.3;
  int steps = 2;
  int passes = 2;
  bool oracle = false;
  std::set<std::string> freeze;

  void validate() const;
};

void to_json(nlohmann::json& j, const AdaptConfig& c);
void from_json(const nlohmann::json& j, AdaptConfig& c);

/// theta <- theta - alpha * grad + lambda * (backup - theta) on every
/// non-frozen parameter. A parameter without a gradient buffer is treated as
/// having a zero gradient. Throws std::logic_error without a backup.
void decay_prior_step(ModelParams& params, double alpha, double lambda, const std::set<std::string>& freeze = {});

}  // namespace docmt
