#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace drpo::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitCriterion = 1,  // assertion or experiment criterion failed
  kExitUsage = 2,      // bad flags, config or input files
  kExitRefusal = 3,    // oracle size cap
};

// Runs `drpo-lab` with args (excluding argv[0]); never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace drpo::cli
