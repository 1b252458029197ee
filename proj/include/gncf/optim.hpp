// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "gncf/tensor.hpp"

namespace gncf {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

/// Bias-corrected Adam without weight decay.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config = {});

  /// Applies one update using each parameter's grad multiplied by
  /// `grad_scale`. Parameters without a grad see a zero gradient.
  void step(double lr, double grad_scale = 1.0);
  std::size_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

/// peak * min(step / warmup, sqrt(warmup / step)) for step >= 1; with no
/// warmup the rate decays as peak / sqrt(step).
double warmup_rate(std::size_t step, double peak, std::size_t warmup);

/// Global L2 norm over every parameter grad.
double grad_norm(const std::vector<Tensor>& params);

/// Factor that brings `norm` down to `max_norm` (1 when already within).
double clip_scale(double norm, double max_norm);

}  // namespace gncf
