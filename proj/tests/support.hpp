#pragma once

#include <torch/torch.h>

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "mgcc/backbone.hpp"
#include "mgcc/data.hpp"

namespace testing {

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("mgcc_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

// Two encoder stages on 8×8 inputs; small enough for finite differences.
inline mgcc::nn::NetworkConfig tiny_network() {
  mgcc::nn::NetworkConfig c;
  c.encoder_channels = {4, 8};
  c.bottleneck_channels = 8;
  c.convmixer_length = 3;
  c.convmixer_kernel = 3;
  c.taps = {0, 1, 2, 3};
  c.num_aux = 3;
  c.msag_enabled = {true, true, true, true};
  return c;
}

// Small but trainable network for 64×64 toy images.
inline mgcc::nn::NetworkConfig small_network() {
  mgcc::nn::NetworkConfig c;
  c.encoder_channels = {8, 16, 32, 64};
  c.bottleneck_channels = 128;
  c.convmixer_length = 3;
  c.convmixer_kernel = 5;
  c.taps = {0, 1, 2, 3};
  return c;
}

inline mgcc::data::Sample square_sample(const std::string& id, std::int64_t size, std::int64_t r0, std::int64_t c0,
                                        std::int64_t side) {
  mgcc::data::Sample s;
  s.id = id;
  s.image = mgcc::data::Image(size, size, 0.8f);
  s.mask = mgcc::data::Mask(size, size, 0);
  for (std::int64_t r = r0; r < r0 + side; ++r) {
    for (std::int64_t c = c0; c < c0 + side; ++c) {
      s.image.at(r, c) = 0.2f;
      s.mask->at(r, c) = 1;
    }
  }
  return s;
}

inline bool bitwise_equal(const torch::Tensor& a, const torch::Tensor& b) {
  return a.sizes() == b.sizes() && a.scalar_type() == b.scalar_type() && torch::equal(a, b);
}

inline bool same_parameters(torch::nn::Module& a, torch::nn::Module& b) {
  auto pa = a.named_parameters(), pb = b.named_parameters();
  if (pa.size() != pb.size()) return false;
  for (const auto& p : pa) {
    if (!bitwise_equal(p.value(), pb[p.key()])) return false;
  }
  return true;
}

}  // namespace testing
