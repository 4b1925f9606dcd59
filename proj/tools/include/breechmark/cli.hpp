#pragma once

#include <iostream>

namespace breechmark::cli {

/// Entry point of the `breechmark` command. Returns 0 on success, 1 on a
/// domain error (bad data, missing inputs, numeric failure) and 2 on a usage
/// error (bad flags, invalid config).
int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace breechmark::cli
