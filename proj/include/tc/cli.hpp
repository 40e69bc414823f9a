#pragma once

// The `tc` command line: estimate, simulate and report subcommands.

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace tc::cli {

enum ExitCode : int { kOk = 0, kInputError = 2, kEstimationError = 3 };

/// Flat `key = value` lines with `#` comments.
std::map<std::string, std::string> read_config(const std::string& path);

/// Runs the command line in-process; output and diagnostics go to the given streams.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tc::cli
