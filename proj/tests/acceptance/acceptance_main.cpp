// Acceptance suite: runs every criterion against the default configuration
// (or the JSON file given as the first argument) and prints one result line
// per criterion. The exit status is nonzero when any criterion fails.

#include <exception>
#include <iostream>

#include "hybridtest/acceptance.hpp"

int main(int argc, char** argv) {
  using namespace hybridtest;
  try {
    const auto cfg = argc > 1 ? cli::load_config(argv[1]) : cli::RunConfig{};
    const std::string filter = argc > 2 ? argv[2] : "";
    const auto results = acceptance::run(cfg, filter, std::cout);
    int fails = 0;
    for (const auto& r : results) fails += !r.passed;
    return fails == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "acceptance suite could not run: " << e.what() << "\n";
    return 2;
  }
}
