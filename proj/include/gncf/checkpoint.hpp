// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>

#include "gncf/model.hpp"

namespace gncf {

// Layout (all integers little-endian):
//   "GNCF"  u32 version  u32 config_bytes  config text (ModelConfig::to_text)
//   then until end of file, per parameter in visit order:
//   u32 name_bytes  name  u32 rank  u64 extent * rank  f64 value * numel
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(GncformerModel& model, const std::filesystem::path& path);

/// Rebuilds the model from the stored config and overwrites every parameter.
/// Throws CheckpointError on a bad magic, unknown version, truncation, or any
/// parameter name/shape that differs from what the config implies.
GncformerModel load_checkpoint(const std::filesystem::path& path);

}  // namespace gncf
