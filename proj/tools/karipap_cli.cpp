#include "karipap/cli.hpp"

int main(int argc, char** argv) {
    return karipap::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
