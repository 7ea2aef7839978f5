#pragma once

#include <string>
#include <vector>

namespace lfss::cli {

/// Entry point behind the lfss binary; exposed so tests can drive
/// subcommands in-process. Returns the process exit status.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);  // args without the program name

}  // namespace lfss::cli
