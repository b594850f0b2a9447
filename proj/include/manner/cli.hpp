#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace manner::cli {

/// Runs the command line `args` (without the program name). Results and
/// tables go to `out`; progress, warnings and the one-line `error[tag]: ...`
/// diagnostic go to `err`. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace manner::cli
