#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace plm {

/// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDivergence = 3;

/// Runs one `plm` invocation. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace plm
