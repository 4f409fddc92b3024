#include "scai/cli.hpp"

int main(int argc, char** argv) { return scai::run_cli(argc, argv); }
