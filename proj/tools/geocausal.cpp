#include "geocausal/cli.hpp"

int main(int argc, char** argv) { return geocausal::cli_main(argc, argv); }
