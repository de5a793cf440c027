#include <vector>

#include "transit/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return transit::run_command(args);
}
