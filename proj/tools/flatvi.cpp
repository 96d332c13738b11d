#include <flatvi/cli.hpp>

int main(int argc, char **argv) { return flatvi::cli::run(argc, argv); }
