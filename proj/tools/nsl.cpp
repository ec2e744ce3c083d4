#include "nsl/cli/cli.hpp"

int main(int argc, char** argv) { return nsl::cli::run(argc, argv); }
