#pragma once

#include <string>
#include <vector>

namespace transit {

int run_command(const std::vector<std::string>& args);

inline int run_command(const std::vector<std::string>& args) {
    (void)args;
    return 1;
}

}  // namespace transit
