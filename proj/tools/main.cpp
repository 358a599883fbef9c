#include "scl/cli.hpp"

int main(int argc, char** argv) { return scl::cli::run(argc, argv); }
