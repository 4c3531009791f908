#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace loopflow::cli {

/// Runs one command line (without the program name). Returns the process
/// exit status: 0 success, 1 usage error, 2 data error, 3 training failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace loopflow::cli
