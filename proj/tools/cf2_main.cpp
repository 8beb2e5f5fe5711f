#include "cf2/cli.hpp"

int main(int argc, char** argv) { return cf2::cli::run(argc, argv); }
