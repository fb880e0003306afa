#include <rlcbf/cli.hpp>

int main(int argc, char** argv) { return rlcbf::cli_main(argc, argv); }
