// Command-line entry point for the experiment driver.

#include "biotdd/driver.hpp"

int main(int argc, char** argv) { return biotdd::run_cli(argc, argv); }
