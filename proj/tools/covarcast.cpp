#include "covarcast/cli.hpp"

int main(int argc, char** argv) { return covarcast::cli::cli_main(argc, argv); }
