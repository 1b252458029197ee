// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace gncf {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Parses `args` (without the program name) and runs the subcommand.
/// Returns 0 on success, 1 on a usage or configuration error, 2 when the
/// command itself fails.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Long flag names (with leading dashes) each subcommand accepts, read from
/// the parser definition.
std::map<std::string, std::vector<std::string>> cli_accepted_flags();

}  // namespace gncf
