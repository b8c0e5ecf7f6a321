#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace pcclip::cli {

// Runs one command line (without the program name). Returns the process exit
// code: 0 success, 1 runtime failure, 2 usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Hash of a produced file that ignores wall-clock fields.
std::string canonical_hash(const std::string& path);

}  // namespace pcclip::cli
