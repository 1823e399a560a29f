#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace msvit::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;      // bad flags, config, or paths
inline constexpr int kExitRuntime = 3;     // failure while doing the work
inline constexpr int kExitDivergence = 4;  // training loss blew up

// Parses one command line and runs it to completion. All human-readable
// output goes through `out`/`err`, so callers (main, tests) can capture it.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace msvit::cli
