#pragma once

#include <iosfwd>

namespace photonbench::cli {

/// Entry point of the `photonbench` command. Returns 0 on success, 2 for usage and
/// validation errors, 1 for runtime failures.
int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

} // namespace photonbench::cli
