// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "gncf/metrics.hpp"
#include "gncf/model.hpp"
#include "gncf/optim.hpp"
#include "gncf/task.hpp"

namespace gncf {

struct TrainConfig {
  TrainConfig();

  ModelConfig model;  // vocab sizes are taken from `task`
  TaskSpec task;
  std::size_t steps = 3000;
  std::size_t batch_size = 32;
  double peak_lr = 1e-3;
  std::size_t warmup = 200;
  AdamConfig adam;
  double clip_norm = 5.0;
  double label_smoothing = 0.1;
  std::uint64_t seed = 1;
  std::size_t eval_interval = 250;
  /// Validation examples used for the periodic rows; 0 means all.
  std::size_t eval_samples = 0;
  /// Ends training once validation token accuracy reaches this; 0 disables.
  double target_token_acc = 0.0;
  std::string metrics_path;
  std::string checkpoint_path;

  /// The model config actually built: vocab sizes follow the task.
  ModelConfig effective_model() const;
  void validate() const;
};

struct TrainResult {
  MetricsRow final_row;
  MetricsRow best_row;
  std::vector<MetricsRow> history;
  std::uint64_t dataset_hash = 0;
  std::size_t parameter_count = 0;
  GncformerModel model;
};

using ProgressFn = std::function<void(const MetricsRow&)>;

/// Teacher-forced training. Emits a row at step 0, every eval_interval
/// steps and at the last step. Throws NumericError naming the step when the
/// loss stops being finite.
TrainResult train(const TrainConfig& config, const ProgressFn& progress = {});

/// Mean label-smoothed cross-entropy of one batch.
Tensor batch_loss(const GncformerModel& model, std::span<const Example> batch,
                  double label_smoothing, Rng* dropout_rng = nullptr);

enum class AblationKind { Order, Placement, Fusion };

std::string to_string(AblationKind kind);
AblationKind parse_ablation_kind(std::string_view text);

struct AblationRow {
  std::string cell;
  std::size_t order = 0;
  std::string placement;
  FusionMode fusion = FusionMode::Internal;
  std::size_t params = 0;
  std::int64_t delta_params = 0;
  std::vector<std::size_t> schedule;
  MetricsRow final_row;
  MetricsRow best_row;
  std::uint64_t dataset_hash = 0;
};

/// Placements none, encoder, decoder, both.
std::string placement_name(bool encoder, bool decoder);
void apply_placement(ModelConfig& config, std::string_view placement);

/// Orders {3, 5}; placements {none, encoder, decoder, both}; fusions
/// {internal, serial, parallel}. Every cell shares the base seed and data.
/// Per-cell metrics files get the cell name appended to metrics_path.
std::vector<AblationRow> run_ablation(AblationKind kind, const TrainConfig& base,
                                      const std::function<void(const std::string&)>& log = {});

std::string format_ablation_csv(std::span<const AblationRow> rows);

}  // namespace gncf
