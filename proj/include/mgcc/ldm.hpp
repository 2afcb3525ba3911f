#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mgcc/data.hpp"

namespace mgcc::ldm {

struct VAEConfig {
  std::int64_t image_size = 64;
  int downsample_factor = 8;
  std::int64_t latent_channels = 4;
  std::int64_t base_channels = 32;
  double kl_weight = 1e-6;
  double lr = 1e-6;
  int epochs = 1000;
  int batch = 4;

  std::vector<std::string> problems() const;
  std::int64_t latent_size() const { return image_size / downsample_factor; }
};

struct DiffusionConfig {
  int steps = 1000;  // T
  double beta_start = 1e-4;
  double beta_end = 2e-2;

  std::vector<std::string> problems() const;
};

struct DenoiserConfig {
  std::vector<std::int64_t> channels{64, 128};
  std::int64_t time_embedding = 128;
  double lr = 1e-4;
  double weight_decay = 1e-2;
  int epochs = 1000;
  int batch = 16;

  std::vector<std::string> problems() const;
};

struct DDIMConfig {
  int steps = 100;
  double eta = 0.0;
  std::uint64_t seed = 0;
};

// Linear β_1..β_T; ᾱ_0 = 1 and ᾱ_t = Π_{s≤t} (1 − β_s), all in double.
class DiffusionSchedule {
 public:
  explicit DiffusionSchedule(const DiffusionConfig& config = {});

  int steps() const noexcept { return static_cast<int>(betas_.size()); }
  double beta(int t) const;       // t in [1, T]
  double alpha_bar(int t) const;  // t in [0, T]
  const DiffusionConfig& config() const noexcept { return config_; }

 private:
  DiffusionConfig config_;
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
};

// √ᾱ_t · z0 + √(1 − ᾱ_t) · noise
torch::Tensor forward_diffuse(const torch::Tensor& z0, int t, const torch::Tensor& noise,
                              const DiffusionSchedule& schedule);
// Per-row timesteps t (int64, shape [B]).
torch::Tensor forward_diffuse(const torch::Tensor& z0, const torch::Tensor& t, const torch::Tensor& noise,
                              const DiffusionSchedule& schedule);

// ε̂(z_t, t); t is an int64 tensor of shape [B].
using EpsPredictor = std::function<torch::Tensor(const torch::Tensor& z_t, const torch::Tensor& t)>;

// Draws ε ~ N(0, I), forms z_t and returns mean((ε − ε̂)²).
torch::Tensor denoiser_loss(const EpsPredictor& predictor, const DiffusionSchedule& schedule, const torch::Tensor& z0,
                            const torch::Tensor& t, at::Generator& gen);
// Same with t ~ U{1..T} per row.
torch::Tensor denoiser_loss(const EpsPredictor& predictor, const DiffusionSchedule& schedule, const torch::Tensor& z0,
                            at::Generator& gen);

// Evenly strided subsequence t_1 < … < t_S = T (t_i = round(i·T/S)).
std::vector<int> ddim_timesteps(int total_steps, int steps);

// One DDIM update from t to t_prev (< t). `gen` is only used when eta > 0.
torch::Tensor ddim_step(const torch::Tensor& z_t, const torch::Tensor& eps, int t, int t_prev,
                        const DiffusionSchedule& schedule, double eta = 0.0, at::Generator* gen = nullptr);

torch::Tensor ddim_sample_from(const EpsPredictor& predictor, const DiffusionSchedule& schedule, torch::Tensor z_T,
                               int steps, double eta = 0.0, at::Generator* gen = nullptr);

// Row i starts from its own N(0, I) stream derived from (config.seed, first_index + i).
torch::Tensor ddim_sample(const EpsPredictor& predictor, const DiffusionSchedule& schedule, const DDIMConfig& config,
                          std::vector<std::int64_t> shape, std::int64_t first_index = 0);

// ---------------------------------------------------------------------------

class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(std::int64_t in_channels, std::int64_t out_channels, std::int64_t time_channels = 0);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& time_embedding = {});

 private:
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, shortcut_{nullptr};
  torch::nn::Linear time_proj_{nullptr};
};
TORCH_MODULE(ResBlock);

struct Posterior {
  torch::Tensor mean;
  torch::Tensor logvar;
};

// Convolutional VAE: log2(downsample_factor) stride-2 stages down to a
// latent_channels × (size/f) × (size/f) Gaussian posterior; the decoder
// mirrors it and ends in a sigmoid.
class VAEImpl : public torch::nn::Module {
 public:
  // Weights are drawn from `init_seed` so construction is reproducible.
  explicit VAEImpl(VAEConfig config, std::uint64_t init_seed = 0);

  Posterior posterior(const torch::Tensor& images);
  torch::Tensor encode(const torch::Tensor& images);  // posterior mean
  torch::Tensor decode(const torch::Tensor& latents);

  const VAEConfig& config() const noexcept { return config_; }
  std::uint64_t init_seed() const noexcept { return init_seed_; }

  // DataError unless images are [B, 1, image_size, image_size].
  void check_images(const torch::Tensor& images) const;

 private:

  VAEConfig config_;
  std::uint64_t init_seed_;
  torch::nn::Sequential encoder_{nullptr};
  torch::nn::Sequential decoder_{nullptr};
};
TORCH_MODULE(VAE);

// Small latent U-Net ε_θ(z_t, t) with a sinusoidal timestep embedding.
class DenoiserImpl : public torch::nn::Module {
 public:
  DenoiserImpl(std::int64_t latent_channels, DenoiserConfig config, std::uint64_t init_seed = 0);
  torch::Tensor forward(const torch::Tensor& z_t, const torch::Tensor& t);

  const DenoiserConfig& config() const noexcept { return config_; }
  std::int64_t latent_channels() const noexcept { return latent_channels_; }
  std::uint64_t init_seed() const noexcept { return init_seed_; }

 private:
  DenoiserConfig config_;
  std::int64_t latent_channels_;
  std::uint64_t init_seed_;
  torch::nn::Linear time1_{nullptr}, time2_{nullptr};
  torch::nn::Conv2d in_conv_{nullptr}, out_conv_{nullptr};
  torch::nn::GroupNorm out_norm_{nullptr};
  torch::nn::ModuleList down_blocks_, downsamplers_, up_blocks_, upsamplers_;
  ResBlock mid_{nullptr};
};
TORCH_MODULE(Denoiser);

torch::Tensor timestep_embedding(const torch::Tensor& t, std::int64_t dim);

// ---------------------------------------------------------------------------

struct TrainLog {
  std::vector<double> epoch_loss;
};

// MSE(x, x̂) + kl_weight · KL(q(z|x) ‖ N(0, I)) with Adam at config.lr.
// NumericalError on divergence.
TrainLog train_vae(VAEImpl& vae, const std::vector<data::Sample>& samples, const VAEConfig& config,
                   std::uint64_t seed);

double reconstruction_mse(VAEImpl& vae, const std::vector<data::Sample>& samples);

// Encodes every sample with the frozen VAE (posterior means).
torch::Tensor encode_all(VAEImpl& vae, const std::vector<data::Sample>& samples);

// 1 / std of the latents; diffusion runs on scaled latents.
double latent_scale(const torch::Tensor& latents);

// ε-prediction on scaled latents with AdamW.
TrainLog train_denoiser(DenoiserImpl& denoiser, const torch::Tensor& scaled_latents, const DiffusionSchedule& schedule,
                        const DenoiserConfig& config, std::uint64_t seed);

// Keeps generated images whose pixel mean and variance fall within
// `sigmas` standard deviations of the reference set's per-image statistics.
struct BandFilter {
  double sigmas = 3.0;
  double mean_center = 0.0, mean_spread = 0.0;
  double var_center = 0.0, var_spread = 0.0;

  static BandFilter from_reference(const std::vector<data::Sample>& reference, double sigmas = 3.0);
  bool accepts(const data::Image& image) const;
};

struct SynthesisOptions {
  int count = 1;
  DDIMConfig ddim;
  std::optional<BandFilter> filter;
  int batch = 16;
  int max_attempts_factor = 10;  // with a filter: stop after count·factor candidates
};

// DDIM latents decoded and clamped to [0, 1]; ids "synth_<seed>_<i>", no masks.
std::vector<data::Sample> synthesize(VAEImpl& vae, DenoiserImpl& denoiser, const DiffusionSchedule& schedule,
                                     double scale, const SynthesisOptions& options);

// Checkpoints use the versioned container shared with the trainer.
void save_vae(VAEImpl& vae, const std::filesystem::path& path, const std::vector<double>& loss_history = {});
VAE load_vae(const std::filesystem::path& path);

struct LatentDenoiser {
  Denoiser denoiser{nullptr};
  DiffusionSchedule schedule;
  double scale = 1.0;
  std::uint64_t vae_hash = 0;
};

void save_denoiser(DenoiserImpl& denoiser, const DiffusionSchedule& schedule, double scale, std::int64_t latent_channels,
                   std::uint64_t vae_hash, const std::filesystem::path& path,
                   const std::vector<double>& loss_history = {});
LatentDenoiser load_denoiser(const std::filesystem::path& path);

}  // namespace mgcc::ldm
