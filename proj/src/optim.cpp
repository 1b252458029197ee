// SPDX-License-Identifier: Apache-2.0
#include "gncf/optim.hpp"

#include <algorithm>
#include <cmath>

namespace gncf {

Adam::Adam(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step(double lr, double grad_scale) {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& m = m_[i];
    auto& v = v_[i];
    auto w = params_[i].mutable_values();
    const bool has = params_[i].has_grad();
    const auto g = has ? params_[i].grad() : std::span<const double>{};
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = has ? g[j] * grad_scale : 0.0;
      m[j] = b1 * m[j] + (1.0 - b1) * gj;
      v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
    }
  }
}

double warmup_rate(std::size_t step, double peak, std::size_t warmup) {
  const double s = static_cast<double>(std::max<std::size_t>(step, 1));
  const double w = static_cast<double>(std::max<std::size_t>(warmup, 1));
  return peak * std::min(s / w, std::sqrt(w / s));
}

double grad_norm(const std::vector<Tensor>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_scale(double norm, double max_norm) {
  return norm > max_norm && norm > 0.0 ? max_norm / norm : 1.0;
}

}  // namespace gncf
