#pragma once

#include <string>
#include <vector>

#include "flags.hpp"

namespace rrt::cli {

struct CommandFlags {
  std::string name;
  std::vector<FlagSpec> flags;  // without the shared --config and --threads
};

// Every subcommand with its registered flags, in help order.
std::vector<CommandFlags> command_registry();

// Parses argv, runs one subcommand and returns the process exit code:
// 0 success, 2 configuration error, 3 data or format error, 4 numerical abort.
int run_cli(int argc, char** argv);

}  // namespace rrt::cli
