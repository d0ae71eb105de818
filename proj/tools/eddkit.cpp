#include "eddkit/commands.hpp"

int main(int argc, char** argv) { return edd::cli_main(argc, argv); }
