#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace mgcc::ckpt {

inline constexpr std::uint32_t kFormatVersion = 1;

struct NamedTensor {
  std::string name;
  torch::Tensor value;
};

// On disk: "MGCCCKPT", u32 version, kind, config JSON, meta JSON, tensors
// (name, dtype, shape, raw bytes), then an FNV-1a checksum of everything
// before it. Writes go through a temporary file and a rename.
struct CheckpointFile {
  std::string kind;
  nlohmann::json config;
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;

  const torch::Tensor& tensor(const std::string& name) const;
  bool has(const std::string& name) const;
};

void write_checkpoint(const CheckpointFile& file, const std::filesystem::path& path);
// DataError on truncation, corruption, or a format version other than
// kFormatVersion (the message names both versions).
CheckpointFile read_checkpoint(const std::filesystem::path& path);

// Parameters and buffers, keyed by their module path with a "param/" or
// "buffer/" prefix.
std::vector<NamedTensor> module_state(const torch::nn::Module& module, const std::string& prefix = "");
// Copies tensors back in place; every parameter and buffer must be present
// with a matching shape.
void load_module_state(torch::nn::Module& module, const CheckpointFile& file, const std::string& prefix = "");

// Lines of the form "key: a -> b" for every differing leaf.
std::vector<std::string> json_diff(const nlohmann::json& expected, const nlohmann::json& actual,
                                   const std::string& path = "");

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t file_hash(const std::filesystem::path& path);
std::string hex(std::uint64_t v);

}  // namespace mgcc::ckpt
