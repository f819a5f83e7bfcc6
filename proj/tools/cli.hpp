#pragma once

#include <atomic>
#include <iosfwd>
#include <string>
#include <vector>

namespace dep::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs one `dep` invocation. `args` excludes the program name.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Set by SIGINT/SIGTERM while run, resume or serve is in progress; tests may
/// set it directly.
std::atomic<bool>& interrupt_flag();

}  // namespace dep::cli
