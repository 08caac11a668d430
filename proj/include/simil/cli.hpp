#pragma once

// Command-line entry point. Exit codes: 0 success, 1 failed self-check
// (gradcheck), 2 usage or invalid configuration, 3 data/format/io error,
// 4 unexpected internal error.

#include <ostream>
#include <string>
#include <vector>

namespace simil::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitInternal = 4;

// args excludes the program name. Logs (with timestamps) go to err only.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string code_version();

}  // namespace simil::cli
