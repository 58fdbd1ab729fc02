#pragma once

#include <iostream>

namespace hiflow::cli {

/// Runs one subcommand. Returns 0 on success, 1 on runtime failure, 2 on usage or config errors.
int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace hiflow::cli
