#include "uemkit/cli.hpp"

int main(int argc, char** argv) { return uem::cli::run(argc, argv); }
