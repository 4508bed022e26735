#include "cli.hpp"

int main(int argc, char** argv) { return ssem::cli::main_entry(argc, argv); }
