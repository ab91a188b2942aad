#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ovda::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsageError = 1;
inline constexpr int kCheckFailed = 2;

// Runs one `ovda` invocation; args exclude the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ovda::cli
