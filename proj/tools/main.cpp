#include <iostream>

#include "anticollapse/cli.hpp"

int main(int argc, char** argv) {
    return anticollapse::cli::run(argc, argv, std::cout, std::cerr);
}
