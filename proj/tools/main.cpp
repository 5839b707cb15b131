#include <iostream>

#include "app.hpp"

int main(int argc, char** argv) {
    rotatelab::cli::configure_logging();
    std::vector<std::string> args(argv + 1, argv + argc);
    return rotatelab::cli::run(args, std::cout, std::cerr);
}
