// Writes the synthetic desk survey (scene text files + images) to a directory.

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "orthosplat/synthetic_scene.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate the synthetic ground + building survey"};
  std::filesystem::path out = "desk";
  orthosplat::synthetic::DeskSceneConfig cfg;
  app.add_option("--out", out, "Output directory");
  app.add_option("--size", cfg.image_size, "Image width and height in pixels");
  app.add_option("--seed", cfg.seed, "Point jitter seed");
  CLI11_PARSE(app, argc, argv);
  try {
    const auto scene = orthosplat::synthetic::DeskScene(cfg).write(out);
    std::cout << "wrote " << scene.images.size() << " images, " << scene.points.size() << " points to " << out.string()
              << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return EXIT_FAILURE;
  }
  return EXIT_SUCCESS;
}
