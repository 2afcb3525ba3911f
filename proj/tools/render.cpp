#include "render.hpp"

#include <algorithm>
#include <cmath>

#include "mgcc/error.hpp"

namespace mgcc::tools {

namespace {

constexpr double kTint = 0.55;

struct Bgr {
  double b, g, r;
};

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

image_io::ColorImage render_overlay(const data::Sample& sample, const data::Mask& prediction) {
  const auto h = sample.image.height, w = sample.image.width;
  if (!prediction.same_shape(h, w)) throw DataError("render: prediction size differs from image " + sample.id);
  image_io::ColorImage out{h, 3 * w, std::vector<std::uint8_t>(static_cast<std::size_t>(h * 3 * w * 3))};

  auto put = [&](std::int64_t r, std::int64_t c, Bgr px) {
    auto* p = &out.bgr[static_cast<std::size_t>((r * out.width + c) * 3)];
    p[0] = to_byte(px.b);
    p[1] = to_byte(px.g);
    p[2] = to_byte(px.r);
  };
  auto tint = [](double gray, Bgr color) {
    return Bgr{(1 - kTint) * gray + kTint * color.b, (1 - kTint) * gray + kTint * color.g,
               (1 - kTint) * gray + kTint * color.r};
  };

  for (std::int64_t r = 0; r < h; ++r) {
    for (std::int64_t c = 0; c < w; ++c) {
      const double g = sample.image.at(r, c);
      const bool gt = sample.mask && sample.mask->at(r, c) != 0;
      const bool pred = prediction.at(r, c) != 0;
      put(r, c, {g, g, g});
      put(r, w + c, gt ? tint(g, {0, 1, 0}) : Bgr{g, g, g});
      Bgr p{g, g, g};
      if (pred) p = gt ? tint(g, {0, 1, 1}) : tint(g, {0, 0, 1});
      put(r, 2 * w + c, p);
    }
  }
  return out;
}

}  // namespace mgcc::tools
