#pragma once

#include <string>
#include <vector>

namespace catnet {

// Parses and runs one command (args exclude the program name). Returns the
// process exit status: 0 success, 1 validation or usage error, 2 runtime
// failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace catnet
