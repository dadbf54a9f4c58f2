#include <sirem/cli.hpp>

int main(int argc, char **argv) { return sirem::cli::run(argc, argv); }
