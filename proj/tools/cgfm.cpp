#include "cgfm/cli.hpp"

int main(int argc, char** argv) { return cgfm::cli::cgfm_main(argc, argv); }
