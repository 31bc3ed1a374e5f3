#include "otter/cli.hpp"

int main(int argc, char** argv) { return otter::cli::run(argc, argv); }
