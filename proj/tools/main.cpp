#include "steerlab/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return steerlab::cli::dispatch(args);
}
