#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace xmodal {

/// Entry point shared by the executable and the tests. `args` excludes the
/// program name. Returns 0 on success, 1 on I/O failures and 2 on
/// validation or usage errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace xmodal
