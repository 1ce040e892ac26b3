#include "dnf/cli.hpp"

int main(int argc, char** argv) { return dnf::run_cli(argc, argv); }
