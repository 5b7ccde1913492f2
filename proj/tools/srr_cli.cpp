#include "commands.hpp"

int main(int argc, char** argv) { return srr::cli::run(argc, argv); }
