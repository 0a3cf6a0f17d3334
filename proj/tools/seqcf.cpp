#include "seqcf/cli.hpp"

int main(int argc, char** argv) { return seqcf::cli::run(argc, argv); }
