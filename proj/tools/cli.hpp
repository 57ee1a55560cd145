#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace expose::cli {

/// Runs one command line; args excludes the program name. Records go to out,
/// diagnostics to err. Returns the process exit code: 0 ok, 1 usage,
/// 2 data or compatibility, 3 numeric failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace expose::cli
