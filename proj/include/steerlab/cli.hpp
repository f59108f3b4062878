#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace steerlab::cli {

// Exit codes: 0 success, 2 argument errors, 3 format/parse errors,
// 4 compatibility/consistency errors, 1 anything else.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitArgument = 2;
inline constexpr int kExitFormat = 3;
inline constexpr int kExitCompatibility = 4;

int dispatch(const std::vector<std::string>& args, std::ostream& out = std::cout,
             std::ostream& err = std::cerr);

} // namespace steerlab::cli
