// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "gncf/tensor.hpp"

namespace gncf {

struct GradCheckEntry {
  std::string module;
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error < tolerance; }
};

/// Largest |analytic - numeric| / max(|analytic|, |numeric|, 1e-3) over
/// every element of `inputs`, using central differences of width 2 * step.
double finite_difference_error(const std::function<Tensor()>& loss, std::vector<Tensor> inputs,
                               double step = 1e-5);

/// tensor, gnconv, esa, model.
const std::vector<std::string>& grad_check_modules();

/// Runs one module's checks, or every module for "all".
std::vector<GradCheckEntry> run_grad_check(std::string_view module, std::uint64_t seed = 1);

}  // namespace gncf
