#pragma once

namespace statexp::cli {

enum ExitCode : int { ok = 0, validation_failure = 1, numerical_failure = 2, io_failure = 3 };

/// Entry point of the statexp command-line tool.
int run(int argc, const char* const* argv);

}  // namespace statexp::cli
