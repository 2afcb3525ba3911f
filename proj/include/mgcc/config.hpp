#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mgcc/backbone.hpp"
#include "mgcc/data.hpp"
#include "mgcc/ldm.hpp"
#include "mgcc/toy.hpp"
#include "mgcc/trainer.hpp"

namespace mgcc::config {

struct DataSection {
  std::int64_t image_size = 256;
  std::string mask_suffix = "_mask";
  double train_ratio = 0.7;
  std::optional<std::int64_t> train_count;
  int repeats = 3;
  int split_index = 0;
  double labeled_fraction = 0.5;
  int labeled_per_batch = 4;
  int unlabeled_per_batch = 4;
  bool augment = true;
  data::AugmentationConfig augmentation;
  data::ToyGenConfig toy;
};

struct ObjectiveSection {
  double w_max = 0.1;
};

struct EvalSection {
  double threshold = 0.5;
  metrics::Averaging averaging = metrics::Averaging::kMacro;
};

struct LdmSection {
  ldm::VAEConfig vae;
  ldm::DiffusionConfig diffusion;
  ldm::DenoiserConfig denoiser;
  ldm::DDIMConfig ddim;
  bool band_filter = false;
};

struct RunSection {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  int threads = 0;  // 0 keeps the libtorch default
};

// One document drives both stages. Sections: data, network, objective, optim,
// eval, ldm, run. Every field has a default; unknown keys are errors.
struct RunConfig {
  DataSection data;
  nn::NetworkConfig network;
  ObjectiveSection objective;
  train::OptimConfig optim;
  EvalSection eval;
  LdmSection ldm;
  RunSection run;

  // Every violated invariant across sections.
  std::vector<std::string> problems() const;
  train::TrainerConfig trainer_config() const;
};

nlohmann::json to_json(const RunConfig& config);
// Collects every unknown key, type error and invariant violation and throws
// one ConfigError listing all of them.
RunConfig from_json(const nlohmann::json& doc);

RunConfig load(const std::filesystem::path& path);
void save(const RunConfig& config, const std::filesystem::path& path);

nlohmann::json network_to_json(const nn::NetworkConfig& config);
nn::NetworkConfig network_from_json(const nlohmann::json& doc);
nlohmann::json trainer_to_json(const train::TrainerConfig& config);
train::TrainerConfig trainer_from_json(const nlohmann::json& doc);
nlohmann::json vae_to_json(const ldm::VAEConfig& config);
ldm::VAEConfig vae_from_json(const nlohmann::json& doc);
nlohmann::json diffusion_to_json(const ldm::DiffusionConfig& config);
ldm::DiffusionConfig diffusion_from_json(const nlohmann::json& doc);
nlohmann::json denoiser_to_json(const ldm::DenoiserConfig& config);
ldm::DenoiserConfig denoiser_from_json(const nlohmann::json& doc);

}  // namespace mgcc::config
