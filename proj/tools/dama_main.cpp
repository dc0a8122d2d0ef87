#include "dama/cli.hpp"

int main(int argc, char** argv) { return dama::cli_main(argc, argv); }
