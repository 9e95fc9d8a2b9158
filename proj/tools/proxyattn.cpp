#include <iostream>

#include "proxyattn/cli.hpp"

int main(int argc, char** argv) {
    return proxyattn::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
