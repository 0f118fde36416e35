#include "cswm/cli.hpp"

int main(int argc, char** argv) { return cswm::cli_main(argc, argv); }
