#include "composer/commands.hpp"

int main(int argc, char** argv) { return composer::run_cli(argc, argv); }
