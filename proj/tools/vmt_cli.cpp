#include "vmt/cli/run.hpp"

int main(int argc, char** argv) { return vmt::cli::run(argc, argv); }
