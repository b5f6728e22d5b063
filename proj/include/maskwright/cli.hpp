#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace maskwright {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

inline constexpr const char* kSeedEnv = "MASKWRIGHT_SEED";

// Runs one command line (program name excluded). Subcommands: gen-task,
// train-base, train-explainer, explain, eval, gradcheck. Values come from
// flags, then a JSON --config file, then the environment (seed only), then
// built-in defaults.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace maskwright
