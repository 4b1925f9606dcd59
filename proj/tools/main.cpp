#include "breechmark/cli.hpp"

int main(int argc, char** argv) { return breechmark::cli::cli_main(argc, argv); }
