#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace mgcc {

// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed for a named sub-stream, e.g. derive_seed(master, {kBatchStream, epoch}).
constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t h = mix64(base);
  for (auto p : path) {
    h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  }
  return h;
}

using Rng = std::mt19937_64;

// Unbiased draw from [0, n) with rejection; independent of the standard
// library's distribution implementation.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = Rng::max() - (Rng::max() % n);
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % n;
}

// Uniform real in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <class Container>
void shuffle_in_place(Container& c, Rng& rng) {
  for (std::size_t i = c.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(c[i - 1], c[j]);
  }
}

// Stream identifiers for derive_seed.
namespace stream {
inline constexpr std::uint64_t kSplit = 1;
inline constexpr std::uint64_t kPartition = 2;
inline constexpr std::uint64_t kLabeledOrder = 3;
inline constexpr std::uint64_t kUnlabeledOrder = 4;
inline constexpr std::uint64_t kAugment = 5;
inline constexpr std::uint64_t kPerturb = 6;
inline constexpr std::uint64_t kInit = 7;
inline constexpr std::uint64_t kToy = 8;
inline constexpr std::uint64_t kDiffusion = 9;
inline constexpr std::uint64_t kSynthesis = 10;
}  // namespace stream

}  // namespace mgcc
