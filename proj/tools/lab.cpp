#include "lab/experiments.hpp"

int main(int argc, char** argv) { return lab::cli_main(argc, argv); }
