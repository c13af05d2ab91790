#pragma once

#include <string>
#include <vector>

namespace ncl {

// Entry point of the `ncl` tool. Returns the process exit code: 0 when every
// requested artifact was written, 1 on a runtime failure, 2 on bad usage.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // args exclude the program name

}  // namespace ncl
