#include <string>
#include <vector>

#include "dkd/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return dkd::run_cli(args);
}
