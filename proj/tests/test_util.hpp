#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "soda/data.hpp"
#include "soda/network.hpp"

namespace soda::testing {

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("soda_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// A small synthetic problem for fast model-level tests.
inline SyntheticSpec tiny_spec(std::uint64_t seed = 0) {
  SyntheticSpec s;
  s.canvas_size = 8;
  s.n_source = 24;
  s.n_target_labeled = 12;
  s.n_target_unlabeled = 16;
  s.seed = seed;
  return s;
}

inline ModelConfig tiny_model(std::size_t num_labels, std::size_t canvas = 8) {
  ModelConfig m;
  m.extractor.height = m.extractor.width = canvas;
  m.extractor.channels = 1;
  m.extractor.conv_widths = {3, 4};
  m.extractor.feature_dim = 8;
  m.hidden_dim = 8;
  m.num_labels = num_labels;
  return m;
}

inline Image random_image(std::size_t h, std::size_t w, std::size_t c, std::mt19937_64& rng) {
  Image img;
  img.height = h;
  img.width = w;
  img.channels = c;
  img.pixels.resize(h * w * c);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& p : img.pixels) p = u(rng);
  return img;
}

}  // namespace soda::testing
