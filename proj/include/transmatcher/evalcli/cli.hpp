#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace transmatcher::evalcli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// Runs one command line (without the program name). Subcommands: gen-data,
/// train, eval, bench-variants, export-matches, grad-check, ablate.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace transmatcher::evalcli
