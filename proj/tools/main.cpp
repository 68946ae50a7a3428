#include "aisle_cli.hpp"

int main(int argc, char** argv) { return aisle::cli::parse_and_dispatch(argc, argv); }
