#include <string>
#include <vector>

#include "d3t/cli.hpp"

int main(int argc, char** argv) {
    return d3t::cli::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
