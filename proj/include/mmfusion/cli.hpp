#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mmf::cli {

enum ExitCode : int { kOk = 0, kUsageOrContract = 1, kIo = 2, kGradcheckFailed = 3 };

/// Runs one subcommand; `args` excludes the program name. Machine-readable
/// results go to `out`, diagnostics to `err`.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mmf::cli
