#include "bhdetect/cli.hpp"

int main(int argc, char** argv) { return bhdetect::run_cli(argc, argv); }
