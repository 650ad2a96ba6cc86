#include "cli/cli.hpp"

int main(int argc, char** argv) { return ctxgan::cli::run(argc, argv); }
