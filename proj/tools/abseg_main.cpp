#include <string>
#include <vector>

#include "abseg/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return abseg::cli::run(args);
}
