#pragma once

#include <ostream>

namespace signglyph {

// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitConfig = 2,  // bad flags, invalid hyperparameters, empty splits
  kExitIo = 3,      // missing or unwritable files
  kExitData = 4,    // malformed manifests, images, checkpoints, CSVs
};

// Runs `signglyph <command> ...` in-process; argv[0] is the program name.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace signglyph
