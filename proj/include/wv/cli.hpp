#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace wv::cli {

/// Exit codes: 0 success, 1 usage error, 2 data or contract error.
int run(int argc, char** argv);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace wv::cli
