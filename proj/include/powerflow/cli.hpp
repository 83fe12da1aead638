#pragma once

// Subcommand front-end shared by the executable and the tests.

#include <iosfwd>
#include <string>
#include <vector>

namespace powerflow {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDivergence = 3;
inline constexpr int kExitAssertion = 4;

// args excludes the program name. Diagnostics go to `err` as one line.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace powerflow
