#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dvtk::cli {

/// Runs the command line `args` (without the program name) and returns the
/// process exit code: 0 success, 2 invalid configuration or arguments,
/// 3 bad data or file format, 4 runtime failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dvtk::cli
