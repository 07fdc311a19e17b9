#include "ss3d/cli.hpp"

int main(int argc, char** argv) { return ss3d::cli(argc, argv); }
