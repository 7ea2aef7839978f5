#include "lfss/cli.hpp"

int main(int argc, char** argv) { return lfss::cli::run(argc, argv); }
