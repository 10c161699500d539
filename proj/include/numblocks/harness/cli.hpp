#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace numblocks::harness {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// `args` excludes the program name. Subcommands: train, eval, dataset, oracle, plot.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace numblocks::harness
