#pragma once

#include <iosfwd>

namespace cfvi::cli {

enum ExitCode : int { kOk = 0, kConfig = 1, kDivergence = 2, kNonConvergence = 3 };

/// Entry point of the `cfvi` tool; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cfvi::cli
