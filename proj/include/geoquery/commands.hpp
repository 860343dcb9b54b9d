#pragma once

#include <iosfwd>

namespace geoquery {

// Process exit codes of the geoquery command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitBadInput = 1;       // unreadable files, malformed content, config errors
inline constexpr int kExitShapeMismatch = 2;
inline constexpr int kExitGradcheck = 3;
inline constexpr int kExitDiverged = 4;

/// Parses argv (argv[0] is the program name) and runs one subcommand.
/// Normal output goes to `out`, diagnostics to `err`; returns the exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace geoquery
