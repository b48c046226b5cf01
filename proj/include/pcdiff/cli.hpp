#pragma once

#include <string>
#include <vector>

namespace pcd::cli {

/// Runs one CLI invocation. Exit codes: 0 success, 1 runtime failure,
/// 2 usage error.
int run(const std::vector<std::string>& args);

}  // namespace pcd::cli
