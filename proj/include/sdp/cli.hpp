#pragma once

#include <iosfwd>

namespace sdp {

// Entry point of the `sdp` tool. Returns the process exit code:
// 0 success, 1 unexpected failure, 2 configuration/usage, 3 data, 4 numerical.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sdp
