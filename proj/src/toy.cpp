#include "mgcc/toy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "mgcc/error.hpp"
#include "mgcc/image_io.hpp"

namespace mgcc::data {

void ToyGenConfig::validate() const {
  if (image_size < 16) throw ConfigError("toy image_size must be >= 16");
  if (lesion_count_range.first < 0 || lesion_count_range.first > lesion_count_range.second) {
    throw ConfigError("toy lesion_count_range must be an ordered non-negative pair");
  }
  if (!(lesion_axis_range.first > 0.0) || lesion_axis_range.first > lesion_axis_range.second) {
    throw ConfigError("toy lesion_axis_range must be an ordered positive pair");
  }
  if (lesion_axis_range.second >= static_cast<double>(image_size) - 2.0) {
    throw ConfigError("toy lesion axes do not fit inside the image");
  }
  if (speckle_strength < 0.0 || blur_sigma < 0.0) throw ConfigError("toy noise parameters must be >= 0");
  if (!(background_level > 0.0 && background_level <= 1.0)) {
    throw ConfigError("toy background_level must lie in (0, 1]");
  }
}

namespace {

struct Ellipse {
  double cy, cx;     // centre
  double ry, rx;     // semi-axes
  double angle;      // radians
  double darkening;  // multiplicative intensity inside

  bool contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = c * dx + s * dy;
    const double v = -s * dx + c * dy;
    return (u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0;
  }
};

Sample make_one(const ToyGenConfig& cfg, int index) {
  Rng rng(derive_seed(cfg.seed, {stream::kToy, static_cast<std::uint64_t>(index)}));
  const auto n = cfg.image_size;
  const double size = static_cast<double>(n);
  auto uniform = [&rng](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };

  // Depth attenuation plus a low-frequency tissue texture.
  const double phase_a = uniform(0.0, 2.0 * std::numbers::pi);
  const double phase_b = uniform(0.0, 2.0 * std::numbers::pi);
  const double freq = uniform(1.0, 2.5) * 2.0 * std::numbers::pi / size;
  Image image(n, n);
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t c = 0; c < n; ++c) {
      const double depth = 1.1 - 0.3 * static_cast<double>(r) / size;
      const double texture = 1.0 + 0.12 * std::sin(freq * c + phase_a) * std::cos(0.7 * freq * r + phase_b);
      image.at(r, c) = static_cast<float>(cfg.background_level * depth * texture);
    }
  }

  const int count = cfg.lesion_count_range.first +
                    static_cast<int>(uniform_index(
                        rng, static_cast<std::uint64_t>(cfg.lesion_count_range.second - cfg.lesion_count_range.first + 1)));
  std::vector<Ellipse> lesions;
  for (int i = 0; i < count; ++i) {
    Ellipse e;
    e.ry = 0.5 * uniform(cfg.lesion_axis_range.first, cfg.lesion_axis_range.second);
    e.rx = 0.5 * uniform(cfg.lesion_axis_range.first, cfg.lesion_axis_range.second);
    e.angle = uniform(0.0, std::numbers::pi);
    const double margin = std::max(e.ry, e.rx) + 1.0;
    e.cy = uniform(margin, size - 1.0 - margin);
    e.cx = uniform(margin, size - 1.0 - margin);
    e.darkening = uniform(0.25, 0.5);
    lesions.push_back(e);
  }

  Mask mask(n, n);
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t c = 0; c < n; ++c) {
      for (const auto& e : lesions) {
        if (e.contains(static_cast<double>(r), static_cast<double>(c))) {
          mask.at(r, c) = 1;
          image.at(r, c) = static_cast<float>(image.at(r, c) * e.darkening);
          break;
        }
      }
    }
  }

  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& v : image.values) {
    const double speckle = std::max(0.0, 1.0 + cfg.speckle_strength * gauss(rng));
    v = static_cast<float>(v * speckle);
  }
  image = image_io::gaussian_blur(image, cfg.blur_sigma);
  for (auto& v : image.values) v = std::clamp(v, 0.0f, 1.0f);

  char id[32];
  std::snprintf(id, sizeof(id), "toy_%05d", index);
  Sample s;
  s.id = id;
  s.image = std::move(image);
  s.mask = std::move(mask);
  s.source = Source::kRealLabeled;
  return s;
}

}  // namespace

std::vector<Sample> generate_toy(const ToyGenConfig& config, int n) {
  config.validate();
  if (n < 1) throw ConfigError("generate_toy needs n >= 1");
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(make_one(config, i));
  return out;
}

}  // namespace mgcc::data
