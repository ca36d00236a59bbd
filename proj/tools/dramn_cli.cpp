#include "dramn/cli.hpp"

int main(int argc, char** argv) { return dramn::cli::run(argc, argv); }
