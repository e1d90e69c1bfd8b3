#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace wsteg::cli {

// Exit status: 0 success, 1 domain error, 2 usage error.
int run(int argc, char** argv);
// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace wsteg::cli
