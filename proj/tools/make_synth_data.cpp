// Generates the procedural 10-class demo dataset in the CIFAR-10 binary
// layout, for running the pipeline without the real batches.

#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "chromaflow/dataset.hpp"
#include "chromaflow/synth.hpp"

int main(int argc, char** argv) {
  CLI::App app{"write a procedural dataset in the CIFAR-10 binary layout"};
  std::string out = "synth.bin";
  std::size_t count = 1000;
  std::uint64_t seed = 1;
  app.add_option("--out", out, "output .bin path");
  app.add_option("--count", count, "number of records");
  app.add_option("--seed", seed, "generator seed");
  CLI11_PARSE(app, argc, argv);

  try {
    auto data = chromaflow::synth::generate(count, seed);
    chromaflow::save_cifar10_bin(data, out);
    std::printf("wrote %zu records to %s\n", data.size(), out.c_str());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
