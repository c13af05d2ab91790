#include "ncl/cli.hpp"

int main(int argc, char** argv) { return ncl::run_cli(argc, argv); }
