#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hrt::cli {

inline constexpr const char* kVersion = "1.0.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

// Runs one subcommand. `args` excludes the program name. Option values are
// layered as defaults < --config JSON < flags; a manifest written by an
// earlier run is accepted as the config file.
int dispatch(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace hrt::cli
