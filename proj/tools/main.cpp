#include "cli.hpp"

int main(int argc, char** argv) { return statexp::cli::run(argc, argv); }
