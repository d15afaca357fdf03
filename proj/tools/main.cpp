#include "alamo/cli.hpp"

int main(int argc, char** argv) { return alamo::cli::run(argc, argv); }
