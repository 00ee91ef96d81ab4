#include "commands.hpp"

int main(int argc, char** argv) { return rrt::cli::run_cli(argc, argv); }
