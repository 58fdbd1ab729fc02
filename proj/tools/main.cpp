#include "cli.hpp"

int main(int argc, char** argv) { return hiflow::cli::run(argc, argv); }
