#include "vssgp/cli.hpp"

int main(int argc, char** argv) { return vssgp::run_cli(argc, argv); }
