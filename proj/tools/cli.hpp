#pragma once

#include <iosfwd>
#include <vector>
#include <string>

namespace chrnn::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kDataError = 3,
  kNumericError = 4,
  kVerificationFailed = 5,
};

/// Runs the tool with `args` (excluding the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace chrnn::cli
