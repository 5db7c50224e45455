#include <iostream>

#include "propfly/cli.hpp"

int main(int argc, char** argv) { return propfly::dispatch(argc, argv, std::cout, std::cerr); }
