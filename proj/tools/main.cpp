#include "commands.hpp"

int main(int argc, char** argv) { return ittr::app::run_cli(argc, argv); }
