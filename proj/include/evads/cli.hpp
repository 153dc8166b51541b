#pragma once

#include <string>
#include <vector>

namespace evads::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Parses `args` (without the program name), runs the subcommand and returns
/// the process exit code: 0 success, 1 usage or validation error, 2 runtime
/// or backend error.
int dispatch(const std::vector<std::string>& args);

}  // namespace evads::cli
