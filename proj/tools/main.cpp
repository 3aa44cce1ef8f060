#include "quire/api.hpp"

int main(int argc, char** argv) { return quire::cli_main(argc, argv); }
