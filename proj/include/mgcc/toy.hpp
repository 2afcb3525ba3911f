#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "mgcc/data.hpp"

namespace mgcc::data {

// Procedural ultrasound-like images: dark elliptical lesions on a brighter,
// slowly varying background with multiplicative speckle and a mild blur.
struct ToyGenConfig {
  std::int64_t image_size = 64;
  std::pair<int, int> lesion_count_range{1, 2};
  // Full axis lengths in pixels.
  std::pair<double, double> lesion_axis_range{10.0, 26.0};
  double speckle_strength = 0.35;
  double blur_sigma = 1.0;
  double background_level = 0.55;
  std::uint64_t seed = 0;

  void validate() const;
};

std::vector<Sample> generate_toy(const ToyGenConfig& config, int n);

}  // namespace mgcc::data
