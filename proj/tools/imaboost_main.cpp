#include "cli.hpp"

int main(int argc, char** argv) { return imaboost::cli::run(argc, argv); }
