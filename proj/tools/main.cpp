#include "fpr/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return fpr::cli::run_main(argc, argv, std::cout, std::cerr); }
