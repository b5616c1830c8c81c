// The mambadet command-line interface.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure,
// 3 correctness or acceptance failure.
#pragma once

#include <iosfwd>
#include <map>
#include <string>

namespace mambadet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kExitCheck = 3;

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Plain-text config: one key = value per line, '#' starts a comment.
std::map<std::string, std::string> parse_config_text(const std::string& text);

}  // namespace mambadet::cli
