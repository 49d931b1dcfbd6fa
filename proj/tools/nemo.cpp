#include "nemo/cli.hpp"

int main(int argc, char** argv) { return nemo::cli::run(argc, argv); }
