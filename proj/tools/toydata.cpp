// Writes a synthetic PNG image set.

#include <iostream>

#include <CLI11.hpp>

#include "sni/toydata.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write a synthetic PNG image set"};
  std::string out;
  int count = 100, size = 32;
  std::uint64_t seed = 0;
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--count", count, "Number of images")->check(CLI::NonNegativeNumber);
  app.add_option("--resolution", size, "Image size")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "Seed");
  CLI11_PARSE(app, argc, argv);
  try {
    sni::write_toy_images(out, count, size, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  std::cout << "wrote " << count << " images to " << out << "\n";
  return 0;
}
