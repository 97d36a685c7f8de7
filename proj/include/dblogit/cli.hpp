#pragma once

#include <iosfwd>

namespace dblogit {

// Parses argv and runs one of the fit-hd / fit-dml / simulate commands.
// Returns 0 on success, 1 on usage errors, 2 on runtime failures.
// Result records go to --output (or `out` when no path is given);
// diagnostics and timing notes go to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dblogit
