#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace guidedql {

//! Exit codes of the command-line tool.
enum ExitCode : int
{
  kExitOk = 0,
  kExitUsage = 2,
  kExitNumeric = 3,
};

//! Runs one command; args exclude the program name.
//!
//! Subcommands: fit, simulate, kernel-table, select-gamma, bandwidth.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace guidedql
