#pragma once

#include <ostream>

namespace densegen::cli {

enum ExitCode { kOk = 0, kInternal = 1, kUsage = 2, kData = 3, kNumerical = 4 };

/// Runs one `densegen` invocation; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace densegen::cli
