#pragma once

#include <string>
#include <vector>

namespace trajlab {

// Full command-line surface: trajlab <command> [flags]. Returns the process
// exit code. Commands: gen-config, train, sweep, analyze.
int run_cli(const std::vector<std::string>& args);

} // namespace trajlab
