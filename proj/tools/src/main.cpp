#include "dstg_cli/commands.hpp"

int main(int argc, char** argv) { return dstg::cli::run_cli(argc, argv); }
