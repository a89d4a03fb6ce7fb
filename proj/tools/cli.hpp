#pragma once

#include <string>
#include <vector>

namespace srfm::cli {

/// Run one `srfm` command line. Returns the process exit code:
/// 0 success, 1 runtime failure, 2 usage error.
int dispatch(const std::vector<std::string>& args);

}  // namespace srfm::cli
