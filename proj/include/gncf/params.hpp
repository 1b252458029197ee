// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gncf/model.hpp"

namespace gncf {

struct ParamGroup {
  std::string module;  // parameter name without its last component
  std::size_t count = 0;
};

struct ParamReport {
  std::vector<ParamGroup> groups;
  /// Gated-convolution parameters per attention block that carries one,
  /// keyed by the block path (e.g. "encoder.0.attn").
  std::vector<ParamGroup> esa_overhead;
  std::size_t total = 0;
  /// Total of the same config with every attention block plain.
  std::size_t baseline_total = 0;
  std::int64_t delta = 0;
};

/// Enumerates the model's parameter tensors.
ParamReport count_parameters(GncformerModel& model);

/// Same config with gnconv disabled everywhere.
ModelConfig baseline_config(const ModelConfig& config);

struct OverheadRow {
  std::size_t order = 0;
  std::size_t total = 0;
  std::int64_t delta = 0;
  std::size_t per_layer = 0;
  std::vector<std::size_t> schedule;
};

/// One row per order with the order substituted into `base`.
std::vector<OverheadRow> overhead_table(const ModelConfig& base, std::span<const std::size_t> orders);

std::string format_overhead_text(std::span<const OverheadRow> rows);
/// Columns: order,total_params,delta_params,schedule (schedule space-separated).
std::string format_overhead_csv(std::span<const OverheadRow> rows);

/// 1546464 -> "1,546,464".
std::string with_commas(std::int64_t value);

}  // namespace gncf
