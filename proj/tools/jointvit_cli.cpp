#include "jointvit/cli.hpp"

int main(int argc, char** argv) { return jointvit::cli::run(argc, argv); }
