#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mvc {

/// Runs one `mvc` invocation. `args` excludes the program name. Returns 0 on
/// success, 1 on a domain error (one `CATEGORY/message` line on `err`) and
/// 2 on a usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Subcommand names in help order.
std::vector<std::string> cli_subcommands();

}  // namespace mvc
