#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace macnet {

// Runs one subcommand. Tables go to `out`, diagnostics to `err`.
// Returns 0 on success, 1 on usage errors, 2 on runtime failures.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace macnet
