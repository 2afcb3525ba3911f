#include "mgcc/ldm.hpp"

#include <cmath>
#include <numeric>

#include "mgcc/backbone.hpp"
#include "mgcc/checkpoint.hpp"
#include "mgcc/config.hpp"
#include "mgcc/error.hpp"
#include "mgcc/random.hpp"
#include "mgcc/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mgcc::ldm {

namespace {

std::int64_t groups_for(std::int64_t channels) { return std::gcd<std::int64_t>(8, channels); }

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

int log2_int(int v) {
  int n = 0;
  while (v > 1) {
    v >>= 1;
    ++n;
  }
  return n;
}

}  // namespace

std::vector<std::string> VAEConfig::problems() const {
  std::vector<std::string> out;
  if (!is_power_of_two(downsample_factor)) out.push_back("downsample_factor must be a power of two");
  if (image_size < 1 || (downsample_factor > 0 && image_size % downsample_factor != 0)) {
    out.push_back("image_size must be a positive multiple of downsample_factor");
  }
  if (latent_channels < 1) out.push_back("latent_channels must be >= 1");
  if (base_channels < 1) out.push_back("base_channels must be >= 1");
  if (!(kl_weight >= 0.0)) out.push_back("kl_weight must be >= 0");
  if (!(lr > 0.0)) out.push_back("lr must be > 0");
  if (epochs < 1) out.push_back("epochs must be >= 1");
  if (batch < 1) out.push_back("batch must be >= 1");
  return out;
}

std::vector<std::string> DiffusionConfig::problems() const {
  std::vector<std::string> out;
  if (steps < 1) out.push_back("steps must be >= 1");
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
    out.push_back("betas must satisfy 0 < beta_start <= beta_end < 1");
  } else if (steps > 1 && !(beta_start < beta_end)) {
    out.push_back("beta_start must be < beta_end when steps > 1");
  }
  return out;
}

std::vector<std::string> DenoiserConfig::problems() const {
  std::vector<std::string> out;
  if (channels.empty()) out.push_back("channels must not be empty");
  for (auto c : channels) {
    if (c < 1) out.push_back("channels must be >= 1");
  }
  if (time_embedding < 2 || time_embedding % 2 != 0) out.push_back("time_embedding must be an even number >= 2");
  if (!(lr > 0.0)) out.push_back("lr must be > 0");
  if (!(weight_decay >= 0.0)) out.push_back("weight_decay must be >= 0");
  if (epochs < 1) out.push_back("epochs must be >= 1");
  if (batch < 1) out.push_back("batch must be >= 1");
  return out;
}

// ---------------------------------------------------------------------------

DiffusionSchedule::DiffusionSchedule(const DiffusionConfig& config) : config_(config) {
  if (auto p = config.problems(); !p.empty()) throw ConfigError("diffusion: " + p.front());
  const int T = config.steps;
  betas_.resize(T);
  alpha_bars_.resize(T + 1);
  alpha_bars_[0] = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / (T - 1);
    betas_[t - 1] = config.beta_start + (config.beta_end - config.beta_start) * frac;
    alpha_bars_[t] = alpha_bars_[t - 1] * (1.0 - betas_[t - 1]);
  }
}

double DiffusionSchedule::beta(int t) const {
  if (t < 1 || t > steps()) throw ConfigError("beta: t=" + std::to_string(t) + " outside [1, T]");
  return betas_[t - 1];
}

double DiffusionSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps()) throw ConfigError("alpha_bar: t=" + std::to_string(t) + " outside [0, T]");
  return alpha_bars_[t];
}

torch::Tensor forward_diffuse(const torch::Tensor& z0, int t, const torch::Tensor& noise,
                              const DiffusionSchedule& schedule) {
  if (z0.sizes() != noise.sizes()) throw DataError("forward_diffuse: noise shape differs from z0");
  const double ab = schedule.alpha_bar(t);
  return std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * noise;
}

torch::Tensor forward_diffuse(const torch::Tensor& z0, const torch::Tensor& t, const torch::Tensor& noise,
                              const DiffusionSchedule& schedule) {
  if (z0.sizes() != noise.sizes()) throw DataError("forward_diffuse: noise shape differs from z0");
  if (t.dim() != 1 || t.size(0) != z0.size(0)) throw DataError("forward_diffuse: t must have one entry per row");
  auto tc = t.to(torch::kLong).contiguous();
  std::vector<double> a(t.size(0)), b(t.size(0));
  for (std::int64_t i = 0; i < t.size(0); ++i) {
    const double ab = schedule.alpha_bar(static_cast<int>(tc[i].item<std::int64_t>()));
    a[i] = std::sqrt(ab);
    b[i] = std::sqrt(1.0 - ab);
  }
  std::vector<std::int64_t> view(z0.dim(), 1);
  view[0] = z0.size(0);
  const auto opts = torch::TensorOptions().dtype(torch::kDouble);
  auto ca = torch::tensor(a, opts).to(z0.scalar_type()).view(view);
  auto cb = torch::tensor(b, opts).to(z0.scalar_type()).view(view);
  return ca * z0 + cb * noise;
}

torch::Tensor denoiser_loss(const EpsPredictor& predictor, const DiffusionSchedule& schedule, const torch::Tensor& z0,
                            const torch::Tensor& t, at::Generator& gen) {
  auto eps = torch::randn(z0.sizes(), gen, z0.options());
  auto zt = forward_diffuse(z0, t, eps, schedule);
  return torch::mse_loss(predictor(zt, t), eps);
}

torch::Tensor denoiser_loss(const EpsPredictor& predictor, const DiffusionSchedule& schedule, const torch::Tensor& z0,
                            at::Generator& gen) {
  auto t = torch::randint(1, schedule.steps() + 1, {z0.size(0)}, gen, torch::TensorOptions().dtype(torch::kLong));
  return denoiser_loss(predictor, schedule, z0, t, gen);
}

std::vector<int> ddim_timesteps(int total_steps, int steps) {
  if (steps < 1 || steps > total_steps) {
    throw ConfigError("ddim steps " + std::to_string(steps) + " outside [1, " + std::to_string(total_steps) + "]");
  }
  std::vector<int> out(steps);
  const std::int64_t T = total_steps, S = steps;
  for (std::int64_t i = 1; i <= S; ++i) out[i - 1] = static_cast<int>((2 * i * T + S) / (2 * S));
  return out;
}

torch::Tensor ddim_step(const torch::Tensor& z_t, const torch::Tensor& eps, int t, int t_prev,
                        const DiffusionSchedule& schedule, double eta, at::Generator* gen) {
  if (!(t_prev >= 0 && t_prev < t)) {
    throw ConfigError("ddim_step: need 0 <= t_prev < t, got t=" + std::to_string(t) + " t_prev=" +
                      std::to_string(t_prev));
  }
  const double ab_t = schedule.alpha_bar(t);
  const double ab_p = schedule.alpha_bar(t_prev);
  auto x0 = (z_t - std::sqrt(1.0 - ab_t) * eps) / std::sqrt(ab_t);
  const double sigma = eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_p);
  const double dir = std::sqrt(std::max(0.0, 1.0 - ab_p - sigma * sigma));
  auto z = std::sqrt(ab_p) * x0 + dir * eps;
  if (sigma > 0.0) {
    if (gen == nullptr) throw ConfigError("ddim_step: eta > 0 needs a generator");
    z = z + sigma * torch::randn(z_t.sizes(), *gen, z_t.options());
  }
  return z;
}

torch::Tensor ddim_sample_from(const EpsPredictor& predictor, const DiffusionSchedule& schedule, torch::Tensor z_T,
                               int steps, double eta, at::Generator* gen) {
  torch::NoGradGuard guard;
  const auto ts = ddim_timesteps(schedule.steps(), steps);
  auto z = std::move(z_T);
  const auto rows = z.size(0);
  for (int i = steps; i >= 1; --i) {
    const int t = ts[i - 1];
    const int t_prev = i > 1 ? ts[i - 2] : 0;
    auto tt = torch::full({rows}, t, torch::TensorOptions().dtype(torch::kLong));
    z = ddim_step(z, predictor(z, tt), t, t_prev, schedule, eta, gen);
  }
  return z;
}

torch::Tensor ddim_sample(const EpsPredictor& predictor, const DiffusionSchedule& schedule, const DDIMConfig& config,
                          std::vector<std::int64_t> shape, std::int64_t first_index) {
  if (shape.empty() || shape[0] < 1) throw ConfigError("ddim_sample: shape needs at least one row");
  std::vector<std::int64_t> row_shape(shape.begin() + 1, shape.end());
  std::vector<torch::Tensor> rows;
  for (std::int64_t i = 0; i < shape[0]; ++i) {
    auto gen = nn::make_generator(
        derive_seed(config.seed, {stream::kSynthesis, static_cast<std::uint64_t>(first_index + i)}));
    rows.push_back(torch::randn(row_shape, gen));
  }
  // Stochastic updates (eta > 0) share one stream keyed by the first row.
  auto noise_gen = nn::make_generator(
      derive_seed(config.seed, {stream::kSynthesis, static_cast<std::uint64_t>(first_index), 1}));
  return ddim_sample_from(predictor, schedule, torch::stack(rows), config.steps, config.eta, &noise_gen);
}

// ---------------------------------------------------------------------------

ResBlockImpl::ResBlockImpl(std::int64_t in, std::int64_t out, std::int64_t time_channels) {
  namespace F = torch::nn;
  norm1_ = register_module("norm1", F::GroupNorm(F::GroupNormOptions(groups_for(in), in)));
  conv1_ = register_module("conv1", F::Conv2d(F::Conv2dOptions(in, out, 3).padding(1)));
  norm2_ = register_module("norm2", F::GroupNorm(F::GroupNormOptions(groups_for(out), out)));
  conv2_ = register_module("conv2", F::Conv2d(F::Conv2dOptions(out, out, 3).padding(1)));
  if (in != out) shortcut_ = register_module("shortcut", F::Conv2d(F::Conv2dOptions(in, out, 1)));
  if (time_channels > 0) time_proj_ = register_module("time_proj", F::Linear(time_channels, out));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& time_embedding) {
  auto h = conv1_(torch::silu(norm1_(x)));
  if (time_proj_ && time_embedding.defined()) {
    h = h + time_proj_(torch::silu(time_embedding)).unsqueeze(-1).unsqueeze(-1);
  }
  h = conv2_(torch::silu(norm2_(h)));
  return h + (shortcut_ ? shortcut_(x) : x);
}

VAEImpl::VAEImpl(VAEConfig config, std::uint64_t init_seed) : config_(std::move(config)), init_seed_(init_seed) {
  if (auto p = config_.problems(); !p.empty()) throw ConfigError("vae: " + p.front());
  namespace F = torch::nn;
  const int stages = log2_int(config_.downsample_factor);
  auto width = [&](int s) { return config_.base_channels * std::min<std::int64_t>(std::int64_t{1} << s, 4); };

  F::Sequential enc;
  enc->push_back(F::Conv2d(F::Conv2dOptions(1, width(0), 3).padding(1)));
  enc->push_back(F::SiLU());
  for (int s = 0; s < stages; ++s) {
    enc->push_back(F::Conv2d(F::Conv2dOptions(width(s), width(s + 1), 4).stride(2).padding(1)));
    enc->push_back(F::GroupNorm(F::GroupNormOptions(groups_for(width(s + 1)), width(s + 1))));
    enc->push_back(F::SiLU());
  }
  enc->push_back(F::Conv2d(F::Conv2dOptions(width(stages), 2 * config_.latent_channels, 3).padding(1)));
  encoder_ = register_module("encoder", enc);

  F::Sequential dec;
  dec->push_back(F::Conv2d(F::Conv2dOptions(config_.latent_channels, width(stages), 3).padding(1)));
  dec->push_back(F::SiLU());
  for (int s = stages; s > 0; --s) {
    dec->push_back(F::Upsample(F::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)));
    dec->push_back(F::Conv2d(F::Conv2dOptions(width(s), width(s - 1), 3).padding(1)));
    dec->push_back(F::GroupNorm(F::GroupNormOptions(groups_for(width(s - 1)), width(s - 1))));
    dec->push_back(F::SiLU());
  }
  dec->push_back(F::Conv2d(F::Conv2dOptions(width(0), 1, 3).padding(1)));
  decoder_ = register_module("decoder", dec);

  nn::initialize_module(*this, init_seed_);
}

void VAEImpl::check_images(const torch::Tensor& images) const {
  if (images.dim() != 4 || images.size(1) != 1 || images.size(2) != config_.image_size ||
      images.size(3) != config_.image_size) {
    throw DataError("vae expects [B, 1, " + std::to_string(config_.image_size) + ", " +
                    std::to_string(config_.image_size) + "] images, got " + c10::str(images.sizes()));
  }
}

Posterior VAEImpl::posterior(const torch::Tensor& images) {
  check_images(images);
  auto h = encoder_->forward(images);
  auto parts = h.chunk(2, 1);
  return {parts[0], parts[1].clamp(-30.0, 20.0)};
}

torch::Tensor VAEImpl::encode(const torch::Tensor& images) { return posterior(images).mean; }

torch::Tensor VAEImpl::decode(const torch::Tensor& latents) {
  const auto s = config_.latent_size();
  if (latents.dim() != 4 || latents.size(1) != config_.latent_channels || latents.size(2) != s || latents.size(3) != s) {
    throw DataError("vae decode expects [B, " + std::to_string(config_.latent_channels) + ", " + std::to_string(s) +
                    ", " + std::to_string(s) + "] latents, got " + c10::str(latents.sizes()));
  }
  return torch::sigmoid(decoder_->forward(latents));
}

torch::Tensor timestep_embedding(const torch::Tensor& t, std::int64_t dim) {
  const auto half = dim / 2;
  auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, torch::kFloat) / static_cast<double>(half));
  auto args = t.to(torch::kFloat).unsqueeze(1) * freqs.unsqueeze(0);
  auto emb = torch::cat({torch::sin(args), torch::cos(args)}, 1);
  if (dim % 2 == 1) emb = torch::nn::functional::pad(emb, torch::nn::functional::PadFuncOptions({0, 1}));
  return emb;
}

DenoiserImpl::DenoiserImpl(std::int64_t latent_channels, DenoiserConfig config, std::uint64_t init_seed)
    : config_(std::move(config)), latent_channels_(latent_channels), init_seed_(init_seed) {
  if (auto p = config_.problems(); !p.empty()) throw ConfigError("denoiser: " + p.front());
  namespace F = torch::nn;
  const auto& ch = config_.channels;
  const auto te = config_.time_embedding;
  time1_ = register_module("time1", F::Linear(te, te));
  time2_ = register_module("time2", F::Linear(te, te));
  in_conv_ = register_module("in_conv", F::Conv2d(F::Conv2dOptions(latent_channels, ch[0], 3).padding(1)));
  for (std::size_t i = 0; i < ch.size(); ++i) {
    down_blocks_->push_back(ResBlock(i == 0 ? ch[0] : ch[i - 1], ch[i], te));
    if (i + 1 < ch.size()) downsamplers_->push_back(F::Conv2d(F::Conv2dOptions(ch[i], ch[i], 3).stride(2).padding(1)));
  }
  mid_ = register_module("mid", ResBlock(ch.back(), ch.back(), te));
  for (std::size_t i = 0; i < ch.size(); ++i) {
    up_blocks_->push_back(ResBlock(2 * ch[i], ch[i], te));
    if (i > 0) upsamplers_->push_back(F::Conv2d(F::Conv2dOptions(ch[i], ch[i - 1], 3).padding(1)));
  }
  register_module("down_blocks", down_blocks_);
  register_module("downsamplers", downsamplers_);
  register_module("up_blocks", up_blocks_);
  register_module("upsamplers", upsamplers_);
  out_norm_ = register_module("out_norm", F::GroupNorm(F::GroupNormOptions(groups_for(ch[0]), ch[0])));
  out_conv_ = register_module("out_conv", F::Conv2d(F::Conv2dOptions(ch[0], latent_channels, 3).padding(1)));

  nn::initialize_module(*this, init_seed_);
}

torch::Tensor DenoiserImpl::forward(const torch::Tensor& z_t, const torch::Tensor& t) {
  const auto levels = static_cast<std::int64_t>(config_.channels.size());
  const std::int64_t divisor = std::int64_t{1} << (levels - 1);
  if (z_t.dim() != 4 || z_t.size(1) != latent_channels_ || z_t.size(2) % divisor != 0 || z_t.size(3) % divisor != 0) {
    throw DataError("denoiser expects [B, " + std::to_string(latent_channels_) + ", H, W] with H, W divisible by " +
                    std::to_string(divisor) + ", got " + c10::str(z_t.sizes()));
  }
  if (t.dim() != 1 || t.size(0) != z_t.size(0)) throw DataError("denoiser: t must have one entry per row");

  auto temb = time2_(torch::silu(time1_(timestep_embedding(t, config_.time_embedding))));
  auto h = in_conv_(z_t);
  std::vector<torch::Tensor> skips;
  for (std::int64_t i = 0; i < levels; ++i) {
    h = down_blocks_[i]->as<ResBlockImpl>()->forward(h, temb);
    skips.push_back(h);
    if (i + 1 < levels) h = downsamplers_[i]->as<torch::nn::Conv2dImpl>()->forward(h);
  }
  h = mid_(h, temb);
  for (std::int64_t i = levels - 1; i >= 0; --i) {
    h = up_blocks_[i]->as<ResBlockImpl>()->forward(torch::cat({h, skips[i]}, 1), temb);
    if (i > 0) {
      h = torch::nn::functional::interpolate(
          h, torch::nn::functional::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(
                 torch::kNearest));
      h = upsamplers_[i - 1]->as<torch::nn::Conv2dImpl>()->forward(h);
    }
  }
  return out_conv_(torch::silu(out_norm_(h)));
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t tag, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, {stream::kDiffusion, tag, static_cast<std::uint64_t>(epoch)}));
  shuffle_in_place(order, rng);
  return order;
}

torch::Tensor gather_rows(const torch::Tensor& all, const std::vector<std::size_t>& order, std::size_t begin,
                          std::size_t end) {
  std::vector<std::int64_t> idx(order.begin() + begin, order.begin() + end);
  return all.index_select(0, torch::tensor(idx, torch::kLong));
}

}  // namespace

TrainLog train_vae(VAEImpl& vae, const std::vector<data::Sample>& samples, const VAEConfig& config,
                   std::uint64_t seed) {
  if (samples.empty()) throw DataError("train_vae: no samples");
  if (auto p = config.problems(); !p.empty()) throw ConfigError("vae: " + p.front());
  auto images = train::images_to_tensor(samples);
  vae.check_images(images);
  vae.train();
  torch::optim::Adam opt(vae.parameters(), torch::optim::AdamOptions(config.lr));
  auto gen = nn::make_generator(derive_seed(seed, {stream::kDiffusion, 0}));
  TrainLog log;
  const auto n = samples.size();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = epoch_order(n, seed, 1, epoch);
    double sum = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b < n; b += config.batch) {
      auto x = gather_rows(images, order, b, std::min(n, b + config.batch));
      auto post = vae.posterior(x);
      auto z = post.mean + torch::exp(0.5 * post.logvar) * torch::randn(post.mean.sizes(), gen);
      auto recon = torch::mse_loss(vae.decode(z), x);
      auto kl = -0.5 * torch::mean(1.0 + post.logvar - post.mean.pow(2) - post.logvar.exp());
      auto loss = recon + config.kl_weight * kl;
      const double v = loss.item<double>();
      if (!std::isfinite(v)) throw NumericalError("vae loss is not finite at epoch " + std::to_string(epoch));
      opt.zero_grad();
      loss.backward();
      opt.step();
      sum += v;
      ++batches;
    }
    log.epoch_loss.push_back(sum / batches);
  }
  vae.eval();
  return log;
}

double reconstruction_mse(VAEImpl& vae, const std::vector<data::Sample>& samples) {
  if (samples.empty()) throw DataError("reconstruction_mse: no samples");
  torch::NoGradGuard guard;
  auto x = train::images_to_tensor(samples);
  return torch::mse_loss(vae.decode(vae.encode(x)), x).item<double>();
}

torch::Tensor encode_all(VAEImpl& vae, const std::vector<data::Sample>& samples) {
  if (samples.empty()) throw DataError("encode_all: no samples");
  torch::NoGradGuard guard;
  return vae.encode(train::images_to_tensor(samples));
}

double latent_scale(const torch::Tensor& latents) {
  const double sd = latents.to(torch::kDouble).std().item<double>();
  return sd > 0.0 && std::isfinite(sd) ? 1.0 / sd : 1.0;
}

TrainLog train_denoiser(DenoiserImpl& denoiser, const torch::Tensor& scaled_latents, const DiffusionSchedule& schedule,
                        const DenoiserConfig& config, std::uint64_t seed) {
  if (scaled_latents.dim() != 4 || scaled_latents.size(0) < 1) throw DataError("train_denoiser: need [N, C, H, W] latents");
  if (auto p = config.problems(); !p.empty()) throw ConfigError("denoiser: " + p.front());
  denoiser.train();
  torch::optim::AdamW opt(denoiser.parameters(), torch::optim::AdamWOptions(config.lr).weight_decay(config.weight_decay));
  auto gen = nn::make_generator(derive_seed(seed, {stream::kDiffusion, 2}));
  EpsPredictor pred = [&](const torch::Tensor& z, const torch::Tensor& t) { return denoiser.forward(z, t); };
  TrainLog log;
  const auto n = static_cast<std::size_t>(scaled_latents.size(0));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = epoch_order(n, seed, 3, epoch);
    double sum = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b < n; b += config.batch) {
      auto z0 = gather_rows(scaled_latents, order, b, std::min(n, b + config.batch));
      auto loss = denoiser_loss(pred, schedule, z0, gen);
      const double v = loss.item<double>();
      if (!std::isfinite(v)) throw NumericalError("denoiser loss is not finite at epoch " + std::to_string(epoch));
      opt.zero_grad();
      loss.backward();
      opt.step();
      sum += v;
      ++batches;
    }
    log.epoch_loss.push_back(sum / batches);
  }
  denoiser.eval();
  return log;
}

// ---------------------------------------------------------------------------

namespace {

std::pair<double, double> image_stats(const data::Image& img) {
  double mean = 0.0;
  for (auto v : img.values) mean += v;
  mean /= static_cast<double>(img.values.size());
  double var = 0.0;
  for (auto v : img.values) var += (v - mean) * (v - mean);
  return {mean, var / static_cast<double>(img.values.size())};
}

}  // namespace

BandFilter BandFilter::from_reference(const std::vector<data::Sample>& reference, double sigmas) {
  if (reference.empty()) throw DataError("band filter needs at least one reference image");
  std::vector<double> means, vars;
  for (const auto& s : reference) {
    auto [m, v] = image_stats(s.image);
    means.push_back(m);
    vars.push_back(v);
  }
  auto ms = metrics::mean_std(means), vs = metrics::mean_std(vars);
  return {sigmas, ms.mean, ms.stdev, vs.mean, vs.stdev};
}

bool BandFilter::accepts(const data::Image& image) const {
  auto [m, v] = image_stats(image);
  constexpr double kSlack = 1e-12;
  return std::abs(m - mean_center) <= sigmas * mean_spread + kSlack &&
         std::abs(v - var_center) <= sigmas * var_spread + kSlack;
}

std::vector<data::Sample> synthesize(VAEImpl& vae, DenoiserImpl& denoiser, const DiffusionSchedule& schedule,
                                     double scale, const SynthesisOptions& options) {
  if (options.count < 0) throw ConfigError("synthesize: count must be >= 0");
  if (options.batch < 1) throw ConfigError("synthesize: batch must be >= 1");
  if (!(scale > 0.0)) throw ConfigError("synthesize: latent scale must be > 0");
  torch::NoGradGuard guard;
  vae.eval();
  denoiser.eval();
  EpsPredictor pred = [&](const torch::Tensor& z, const torch::Tensor& t) { return denoiser.forward(z, t); };
  const auto c = vae.config().latent_channels, s = vae.config().latent_size();
  const std::int64_t limit =
      options.filter ? static_cast<std::int64_t>(options.count) * options.max_attempts_factor : options.count;

  std::vector<data::Sample> out;
  std::int64_t drawn = 0;
  while (static_cast<int>(out.size()) < options.count && drawn < limit) {
    const auto rows = std::min<std::int64_t>(options.batch, limit - drawn);
    auto latents = ddim_sample(pred, schedule, options.ddim, {rows, c, s, s}, drawn);
    auto images = vae.decode(latents / scale).clamp(0.0, 1.0).contiguous();
    for (std::int64_t r = 0; r < rows && static_cast<int>(out.size()) < options.count; ++r) {
      data::Sample smp;
      smp.image = data::Image(images.size(2), images.size(3));
      auto row = images[r][0].contiguous();
      std::copy(row.data_ptr<float>(), row.data_ptr<float>() + row.numel(), smp.image.values.begin());
      if (options.filter && !options.filter->accepts(smp.image)) continue;
      smp.id = "synth_" + std::to_string(options.ddim.seed) + "_" + std::to_string(out.size());
      smp.source = data::Source::kSynthetic;
      out.push_back(std::move(smp));
    }
    drawn += rows;
  }
  return out;
}

// ---------------------------------------------------------------------------

void save_vae(VAEImpl& vae, const fs::path& path, const std::vector<double>& loss_history) {
  ckpt::CheckpointFile file;
  file.kind = "vae";
  file.config = {{"vae", config::vae_to_json(vae.config())}};
  file.meta = {{"init_seed", vae.init_seed()}, {"loss_history", loss_history}};
  file.tensors = ckpt::module_state(vae, "vae/");
  ckpt::write_checkpoint(file, path);
}

VAE load_vae(const fs::path& path) {
  auto file = ckpt::read_checkpoint(path);
  if (file.kind != "vae") throw DataError("checkpoint " + path.string() + " holds a '" + file.kind + "', expected vae");
  VAE vae(config::vae_from_json(file.config.at("vae")), file.meta.value("init_seed", std::uint64_t{0}));
  ckpt::load_module_state(*vae, file, "vae/");
  vae->eval();
  return vae;
}

void save_denoiser(DenoiserImpl& denoiser, const DiffusionSchedule& schedule, double scale,
                   std::int64_t latent_channels, std::uint64_t vae_hash, const fs::path& path,
                   const std::vector<double>& loss_history) {
  ckpt::CheckpointFile file;
  file.kind = "denoiser";
  file.config = {{"denoiser", config::denoiser_to_json(denoiser.config())},
                 {"diffusion", config::diffusion_to_json(schedule.config())},
                 {"latent_channels", latent_channels}};
  file.meta = {{"scale", scale},
               {"vae_hash", ckpt::hex(vae_hash)},
               {"init_seed", denoiser.init_seed()},
               {"loss_history", loss_history}};
  file.tensors = ckpt::module_state(denoiser, "denoiser/");
  ckpt::write_checkpoint(file, path);
}

LatentDenoiser load_denoiser(const fs::path& path) {
  auto file = ckpt::read_checkpoint(path);
  if (file.kind != "denoiser") {
    throw DataError("checkpoint " + path.string() + " holds a '" + file.kind + "', expected denoiser");
  }
  LatentDenoiser out;
  try {
    out.schedule = DiffusionSchedule(config::diffusion_from_json(file.config.at("diffusion")));
    out.denoiser = Denoiser(file.config.at("latent_channels").get<std::int64_t>(),
                            config::denoiser_from_json(file.config.at("denoiser")),
                            file.meta.value("init_seed", std::uint64_t{0}));
    out.scale = file.meta.at("scale").get<double>();
    out.vae_hash = std::stoull(file.meta.at("vae_hash").get<std::string>(), nullptr, 16);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("denoiser checkpoint " + path.string() + " is missing fields: " + e.what());
  }
  ckpt::load_module_state(*out.denoiser, file, "denoiser/");
  out.denoiser->eval();
  return out;
}

}  // namespace mgcc::ldm
