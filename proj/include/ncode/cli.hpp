#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ncode {

/// Process exit codes of the command-line runner.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 1,     // bad config, flags, files or unsupported request
  kExitNumerical = 2,  // solver or optimizer failure
  kExitCheckFailed = 3 // grad-check ran but exceeded its threshold
};

/// Entry point of the `ncode` tool: subcommands run, grad-check, replay and
/// gen-data. Never throws; errors are reported on `err`.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Convenience overload for tests.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Reads a numeric CSV. A first row that does not parse as numbers is taken
/// as a header; blank lines and lines starting with '#' are skipped.
std::vector<std::vector<double>> read_numeric_csv(const std::string& path);

}  // namespace ncode
