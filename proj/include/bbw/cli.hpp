#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace bbw::cli {

// Exit codes: 0 success, 1 domain error (JSON error document on `err`),
// 2 usage error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitDomainError = 1;
inline constexpr int kExitUsage = 2;

// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bbw::cli
