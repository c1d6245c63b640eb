#pragma once

#include <string>
#include <vector>

namespace tra {

// Entry point behind the `tra` binary; also callable from tests.
int run_command(int argc, char** argv);
int run_command(const std::vector<std::string>& args);

}  // namespace tra
