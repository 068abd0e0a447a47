#pragma once

#include <string>
#include <vector>

namespace dkd {

// Full command-line driver; returns the process exit code
// (0 ok, 2 usage/config, 3 data, 4 numeric/training).
int run_cli(const std::vector<std::string>& args);

} // namespace dkd
