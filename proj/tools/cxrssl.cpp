#include "cxrssl/cli/commands.hpp"

int main(int argc, char** argv) { return cxrssl::cli::run(argc, argv); }
