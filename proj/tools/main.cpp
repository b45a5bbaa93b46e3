#include "commands.hpp"

int main(int argc, char** argv) { return sbglm::cli::run(argc, argv); }
