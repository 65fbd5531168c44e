#pragma once

#include <ostream>

namespace gtf {

// Compact oracle/invariant sweep: one line per check, returns the number of
// failures (0 = healthy build).
int run_selftest(std::ostream& out);

} // namespace gtf
