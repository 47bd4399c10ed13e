#pragma once

// Central-difference gradient check of the full transformer loss. Include
// only from translation units built in double precision.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "docmt/model.hpp"

namespace gradcheck {

struct Report {
  double max_rel_error = 0;
  std::string worst_param;
  std::size_t checked = 0;
};

/// Relative error |a - n| / max(|a|, |n|, floor); the floor keeps vanishing
/// gradients from dividing roundoff by zero.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), floor});
}

/// Compares analytic gradients of the batch loss against central
/// differences with step h on every parameter entry.
inline Report check_model(docmt::ModelParams& params, const docmt::Batch& batch, double smoothing = 0.0,
                          double h = 1e-5) {
  using docmt::Real;
  params.zero_grad();
  docmt::Tensor loss = docmt::forward_loss(params, batch, static_cast<Real>(smoothing), false);
  docmt::backward(loss);
  Report report;
  docmt::NoGradGuard no_grad;
  for (auto& [name, tensor] : params.tensors) {
    const std::vector<Real> analytic(tensor.grad().begin(), tensor.grad().end());
    auto data = tensor.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const Real saved = data[i];
      data[i] = saved + static_cast<Real>(h);
      const double up = docmt::forward_loss(params, batch, static_cast<Real>(smoothing), false).item();
      data[i] = saved - static_cast<Real>(h);
      const double down = docmt::forward_loss(params, batch, static_cast<Real>(smoothing), false).item();
      data[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic.empty() ? 0.0 : static_cast<double>(analytic[i]);
      const double e = rel_error(a, numeric);
      if (e > report.max_rel_error) {
        report.max_rel_error = e;
        report.worst_param = name + "[" + std::to_string(i) + "]";
      }
      ++report.checked;
    }
  }
  return report;
}

}  // namespace gradcheck
