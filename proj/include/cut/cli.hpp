#pragma once

// The `cut` command line. Exit codes: 0 success, 2 configuration or usage
// error, 3 runtime failure.

#include <iosfwd>
#include <string>
#include <vector>

namespace cut::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

/// Environment variable consulted when --device is not given.
inline constexpr const char* kDeviceEnv = "CUT_DEVICE";

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cut::cli
