#include "cli.hpp"

int main(int argc, char** argv) { return irrbma::cli::run(argc, argv); }
