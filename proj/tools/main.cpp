#include <iostream>

#include "gazeswap/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return gazeswap::run_cli(args, std::cout, std::cerr);
}
