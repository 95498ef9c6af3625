#include "tango/cli.hpp"

int main(int argc, char** argv) { return tango::cli::run(argc, argv); }
