#pragma once

#include "mgcc/data.hpp"
#include "mgcc/image_io.hpp"

namespace mgcc::tools {

inline constexpr const char* kOverlayLegend =
    "panels left to right: input | ground truth | prediction\n"
    "ground truth: green tint over the input (panel left plain when no mask is available)\n"
    "prediction: red tint over the input, yellow where it overlaps the ground truth\n";

// Three side-by-side panels, each the size of the input.
image_io::ColorImage render_overlay(const data::Sample& sample, const data::Mask& prediction);

}  // namespace mgcc::tools
