#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace stict::cli {

/// Runs the command line `args` (without the program name) and returns the exit code:
/// 0 success, 1 validation failure, 2 numerical failure, 3 I/O failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace stict::cli
