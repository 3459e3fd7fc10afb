#include "gimbal/cli.hpp"

int main(int argc, char** argv) { return gimbal::cli::run_cli(argc, argv); }
