#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dloo/error.hpp"

namespace dloo::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitAnalysisInput = 3;
inline constexpr int kExitBackend = 4;

int exit_code_for(ErrorCode code);

// args[0] is the program name. Never throws; diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dloo::cli
