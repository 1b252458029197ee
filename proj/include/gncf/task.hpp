// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gncf {

enum class TaskKind { Copy, Reverse, Sort };

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(std::string_view text);

/// `vocab` counts the reserved pad/bos/eos ids, so symbols are 3..vocab-1.
struct TaskSpec {
  TaskKind kind = TaskKind::Copy;
  std::size_t vocab = 20;
  std::size_t min_len = 5;
  std::size_t max_len = 12;
  std::size_t samples = 5000;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Example {
  std::vector<int> source;
  std::vector<int> target;

  bool operator==(const Example&) const = default;
};

struct Dataset {
  std::vector<Example> train;
  std::vector<Example> validation;

  /// FNV-1a over every token of both splits.
  std::uint64_t hash() const;
};

std::vector<int> task_target(TaskKind kind, std::span<const int> source);

/// Draws `samples` distinct sources and splits them 90/10 (at least one
/// validation example). Throws ConfigError when the task cannot supply that
/// many distinct sources.
Dataset generate_task(const TaskSpec& spec);

/// One example per line: source tokens, a tab, target tokens.
void save_examples(std::span<const Example> examples, const std::filesystem::path& path);
std::vector<Example> load_examples(const std::filesystem::path& path);

}  // namespace gncf
