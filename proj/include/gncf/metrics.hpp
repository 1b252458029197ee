// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "gncf/model.hpp"
#include "gncf/task.hpp"

namespace gncf {

/// Levenshtein distance with unit substitution, insertion and deletion costs.
std::size_t edit_distance(std::span<const int> reference, std::span<const int> hypothesis);

struct EvalResult {
  double token_accuracy = 0.0;     // position-wise matches over reference tokens
  double sequence_accuracy = 0.0;  // exact matches over sequences
  double edit_rate = 0.0;          // total edit distance over reference tokens
};

EvalResult score(std::span<const std::vector<int>> references,
                 std::span<const std::vector<int>> hypotheses);

/// Greedy-decodes every source (up to source length + 2 tokens) in batches.
EvalResult evaluate(const GncformerModel& model, std::span<const Example> examples,
                    std::size_t batch_size = 64);

struct MetricsRow {
  std::size_t step = 0;
  double loss = 0.0;
  double token_acc = 0.0;
  double seq_acc = 0.0;
  double edit_rate = 0.0;
  double seconds = 0.0;
};

inline constexpr const char* kMetricsHeader = "step,loss,token_acc,seq_acc,edit_rate,seconds";

std::string format_metrics_row(const MetricsRow& row);

/// Append-only CSV writer; rejects rows whose step does not increase.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path);
  void append(const MetricsRow& row);

 private:
  std::ofstream out_;
  bool any_ = false;
  std::size_t last_step_ = 0;
};

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

}  // namespace gncf
