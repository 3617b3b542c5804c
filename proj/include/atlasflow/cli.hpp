#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace atlasflow::cli {

// Exit codes shared by every subcommand.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kDegenerateLens = 3,
  kDivergence = 4,
  kCorruptFile = 5,
  kLabelMismatch = 6,
};

// Runs one command line (without the program name) and returns its exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace atlasflow::cli
