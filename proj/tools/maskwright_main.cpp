#include <iostream>
#include <string>
#include <vector>

#include "maskwright/cli.hpp"

int main(int argc, char** argv) {
    return maskwright::dispatch(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
