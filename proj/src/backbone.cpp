#include "mgcc/backbone.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <functional>
#include <sstream>

#include "mgcc/error.hpp"
#include "mgcc/random.hpp"

namespace F = torch::nn::functional;

namespace mgcc::nn {

std::string to_string(PerturbationKind k) {
  switch (k) {
    case PerturbationKind::kNone:
      return "none";
    case PerturbationKind::kFeatureNoise:
      return "f-noise";
    case PerturbationKind::kFeatureDrop:
      return "f-drop";
    case PerturbationKind::kDropout:
      return "dropout";
  }
  return "?";
}

PerturbationKind perturbation_from_string(const std::string& s) {
  if (s == "none") return PerturbationKind::kNone;
  if (s == "f-noise") return PerturbationKind::kFeatureNoise;
  if (s == "f-drop") return PerturbationKind::kFeatureDrop;
  if (s == "dropout") return PerturbationKind::kDropout;
  throw ConfigError("unknown perturbation kind '" + s + "'");
}

PerturbationSpec PerturbationSpec::feature_noise(double bound) {
  PerturbationSpec p;
  p.kind = PerturbationKind::kFeatureNoise;
  p.noise_bound = bound;
  return p;
}

PerturbationSpec PerturbationSpec::feature_drop(double lo, double hi) {
  PerturbationSpec p;
  p.kind = PerturbationKind::kFeatureDrop;
  p.drop_threshold_range = {lo, hi};
  return p;
}

PerturbationSpec PerturbationSpec::dropout(double rate) {
  PerturbationSpec p;
  p.kind = PerturbationKind::kDropout;
  p.dropout_rate = rate;
  return p;
}

std::vector<std::string> PerturbationSpec::problems() const {
  std::vector<std::string> out;
  switch (kind) {
    case PerturbationKind::kFeatureNoise:
      if (!(noise_bound >= 0.0)) out.push_back("f-noise bound must be >= 0");
      break;
    case PerturbationKind::kFeatureDrop: {
      auto [lo, hi] = drop_threshold_range;
      if (!(lo > 0.0 && lo <= hi && hi < 1.0)) out.push_back("f-drop range must satisfy 0 < lo <= hi < 1");
      break;
    }
    case PerturbationKind::kDropout:
      if (!(dropout_rate > 0.0 && dropout_rate < 1.0)) out.push_back("dropout rate must lie in (0, 1)");
      break;
    case PerturbationKind::kNone:
      break;
  }
  return out;
}

bool NetworkConfig::any_msag() const {
  for (bool b : msag_enabled) {
    if (b) return true;
  }
  return false;
}

std::vector<std::string> NetworkConfig::problems() const {
  std::vector<std::string> out;
  if (input_channels < 1) out.push_back("input_channels must be >= 1");
  if (encoder_channels.empty()) out.push_back("encoder_channels must not be empty");
  for (auto c : encoder_channels) {
    if (c < 1) out.push_back("encoder_channels entries must be >= 1");
  }
  if (bottleneck_channels < 1) out.push_back("bottleneck_channels must be >= 1");
  if (convmixer_length < 0) out.push_back("convmixer_length must be >= 0");
  if (convmixer_kernel < 1 || convmixer_kernel % 2 == 0) out.push_back("convmixer_kernel must be odd and >= 1");
  if (num_aux < 0) out.push_back("num_aux must be >= 0");
  if (static_cast<int>(taps.size()) != num_aux + 1) {
    out.push_back("taps must have num_aux + 1 entries");
  } else {
    for (std::size_t i = 0; i < taps.size(); ++i) {
      if (taps[i] < 0 || taps[i] > convmixer_length) out.push_back("taps must lie in [0, convmixer_length]");
      if (i > 0 && taps[i] < taps[i - 1]) out.push_back("taps must be non-decreasing");
    }
    if (taps.back() != convmixer_length) out.push_back("the main tap (last) must equal convmixer_length");
  }
  if (static_cast<int>(msag_enabled.size()) != num_aux + 1) {
    out.push_back("msag_enabled must have num_aux + 1 entries");
  }
  if (static_cast<int>(perturbations.size()) != num_aux) {
    out.push_back("perturbations must have num_aux entries");
  }
  for (const auto& p : perturbations) {
    for (auto& s : p.problems()) out.push_back(std::move(s));
  }
  return out;
}

void NetworkConfig::validate() const {
  auto errs = problems();
  if (errs.empty()) return;
  std::ostringstream os;
  os << "invalid network config:";
  for (const auto& e : errs) os << "\n  - " << e;
  throw ConfigError(os.str());
}

// ---------------------------------------------------------------------------

DoubleConvImpl::DoubleConvImpl(std::int64_t in_channels, std::int64_t out_channels) {
  using namespace torch::nn;
  conv1_ = register_module("conv1", Conv2d(Conv2dOptions(in_channels, out_channels, 3).padding(1)));
  bn1_ = register_module("bn1", BatchNorm2d(out_channels));
  conv2_ = register_module("conv2", Conv2d(Conv2dOptions(out_channels, out_channels, 3).padding(1)));
  bn2_ = register_module("bn2", BatchNorm2d(out_channels));
}

torch::Tensor DoubleConvImpl::forward(const torch::Tensor& x) {
  auto y = torch::relu(bn1_(conv1_(x)));
  return torch::relu(bn2_(conv2_(y)));
}

EncoderImpl::EncoderImpl(std::int64_t input_channels, const std::vector<std::int64_t>& channels,
                         std::int64_t bottleneck_channels)
    : divisor_(std::int64_t{1} << channels.size()) {
  std::int64_t prev = input_channels;
  for (auto c : channels) {
    stages_->push_back(DoubleConv(prev, c));
    prev = c;
  }
  register_module("stages", stages_);
  bottleneck_ = register_module("bottleneck", DoubleConv(prev, bottleneck_channels));
}

EncoderOutput EncoderImpl::forward(const torch::Tensor& images) {
  TORCH_CHECK(images.dim() == 4, "encoder expects B×C×H×W input");
  if (images.size(2) % divisor_ != 0 || images.size(3) % divisor_ != 0) {
    throw DataError("input size " + std::to_string(images.size(2)) + "x" + std::to_string(images.size(3)) +
                    " is not divisible by " + std::to_string(divisor_));
  }
  EncoderOutput out;
  torch::Tensor x = images;
  for (std::size_t i = 0; i < stages_->size(); ++i) {
    x = stages_[i]->as<DoubleConv>()->forward(x);
    out.skips.push_back(x);
    x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2));
  }
  out.bottleneck = bottleneck_(x);
  return out;
}

ConvMixerLayerImpl::ConvMixerLayerImpl(std::int64_t channels, int kernel) {
  using namespace torch::nn;
  depthwise_ = register_module(
      "depthwise", Conv2d(Conv2dOptions(channels, channels, kernel).groups(channels).padding(kernel / 2)));
  bn_depthwise_ = register_module("bn_depthwise", BatchNorm2d(channels));
  pointwise_ = register_module("pointwise", Conv2d(Conv2dOptions(channels, channels, 1)));
  bn_pointwise_ = register_module("bn_pointwise", BatchNorm2d(channels));
}

torch::Tensor ConvMixerLayerImpl::forward(const torch::Tensor& f) {
  auto mixed = bn_depthwise_(torch::gelu(depthwise_(f))) + f;
  return bn_pointwise_(torch::gelu(pointwise_(mixed)));
}

ConvMixerStackImpl::ConvMixerStackImpl(std::int64_t channels, int kernel, int length) : length_(length) {
  for (int i = 0; i < length; ++i) layers_->push_back(ConvMixerLayer(channels, kernel));
  register_module("layers", layers_);
}

std::map<int, torch::Tensor> ConvMixerStackImpl::forward(const torch::Tensor& f, int length,
                                                         const std::set<int>& taps) {
  if (length < 0 || length > length_) {
    throw ConfigError("convmixer length " + std::to_string(length) + " exceeds configured " +
                      std::to_string(length_));
  }
  for (int t : taps) {
    if (t < 0 || t > length) throw ConfigError("tap " + std::to_string(t) + " outside [0, " + std::to_string(length) + "]");
  }
  std::map<int, torch::Tensor> out;
  if (taps.empty()) return out;
  torch::Tensor x = f;
  if (taps.contains(0)) out.emplace(0, x);
  const int last = *taps.rbegin();
  for (int l = 1; l <= last; ++l) {
    x = layers_[static_cast<std::size_t>(l - 1)]->as<ConvMixerLayer>()->forward(x);
    if (taps.contains(l)) out.emplace(l, x);
  }
  return out;
}

AttentionGateImpl::AttentionGateImpl(std::int64_t channels) {
  using namespace torch::nn;
  pointwise_ = register_module("pointwise", Conv2d(Conv2dOptions(channels, channels, 1)));
  bn_pointwise_ = register_module("bn_pointwise", BatchNorm2d(channels));
  ordinary_ = register_module("ordinary", Conv2d(Conv2dOptions(channels, channels, 3).stride(1).padding(1)));
  bn_ordinary_ = register_module("bn_ordinary", BatchNorm2d(channels));
  dilated_ = register_module("dilated",
                             Conv2d(Conv2dOptions(channels, channels, 3).stride(1).padding(2).dilation(2)));
  bn_dilated_ = register_module("bn_dilated", BatchNorm2d(channels));
  fuse_ = register_module("fuse", Conv2d(Conv2dOptions(3 * channels, channels, 1)));
}

torch::Tensor AttentionGateImpl::forward(const torch::Tensor& f) {
  auto concat = torch::relu(
      torch::cat({bn_pointwise_(pointwise_(f)), bn_ordinary_(ordinary_(f)), bn_dilated_(dilated_(f))}, 1));
  auto gate = torch::sigmoid(fuse_(concat));
  return f * gate + f;
}

DecoderImpl::DecoderImpl(const std::vector<std::int64_t>& encoder_channels, std::int64_t bottleneck_channels) {
  std::int64_t prev = bottleneck_channels;
  for (auto it = encoder_channels.rbegin(); it != encoder_channels.rend(); ++it) {
    stages_->push_back(DoubleConv(prev + *it, *it));
    prev = *it;
  }
  register_module("stages", stages_);
  head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(prev, 1, 1)));
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& bottleneck, const std::vector<torch::Tensor>& skips) {
  if (skips.size() != stages_->size()) {
    throw DataError("decoder expects " + std::to_string(stages_->size()) + " skips, got " +
                    std::to_string(skips.size()));
  }
  torch::Tensor x = bottleneck;
  for (std::size_t i = 0; i < stages_->size(); ++i) {
    const auto& skip = skips[skips.size() - 1 - i];
    if (skip.size(0) != x.size(0) || skip.size(2) != 2 * x.size(2) || skip.size(3) != 2 * x.size(3)) {
      throw DataError("decoder stage " + std::to_string(i) + ": skip shape " + c10::str(skip.sizes()) +
                      " does not match upsampled input " + c10::str(x.sizes()));
    }
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .size(std::vector<std::int64_t>{skip.size(2), skip.size(3)})
                              .mode(torch::kBilinear)
                              .align_corners(false));
    x = stages_[i]->as<DoubleConv>()->forward(torch::cat({skip, x}, 1));
  }
  return head_(x);
}

torch::Tensor perturb(const torch::Tensor& f, const PerturbationSpec& spec, at::Generator& gen, ForwardMode mode) {
  if (mode == ForwardMode::kEval) return f;
  switch (spec.kind) {
    case PerturbationKind::kNone:
      return f;
    case PerturbationKind::kFeatureNoise: {
      if (spec.noise_bound == 0.0) return f;
      auto noise = torch::empty_like(f).uniform_(-spec.noise_bound, spec.noise_bound, gen);
      return f + f * noise;
    }
    case PerturbationKind::kFeatureDrop: {
      auto saliency = f.abs().sum(1, /*keepdim=*/true);
      auto peak = saliency.amax({2, 3}, /*keepdim=*/true).clamp_min(1e-12);
      saliency = saliency / peak;
      auto gamma = torch::empty({f.size(0), 1, 1, 1}, f.options())
                       .uniform_(spec.drop_threshold_range.first, spec.drop_threshold_range.second, gen);
      auto keep = (saliency < gamma).to(f.scalar_type());
      return f * keep;
    }
    case PerturbationKind::kDropout: {
      const double keep_prob = 1.0 - spec.dropout_rate;
      auto keep = torch::empty_like(f).bernoulli_(keep_prob, gen);
      return f * keep / keep_prob;
    }
  }
  return f;
}

// ---------------------------------------------------------------------------

MGCCNetImpl::MGCCNetImpl(NetworkConfig config) : config_(std::move(config)) {
  config_.validate();
  encoder_ = register_module(
      "encoder", Encoder(config_.input_channels, config_.encoder_channels, config_.bottleneck_channels));
  convmixer_ = register_module(
      "convmixer", ConvMixerStack(config_.bottleneck_channels, config_.convmixer_kernel, config_.convmixer_length));
  if (config_.any_msag()) {
    gates_ = torch::nn::ModuleList();
    for (auto c : config_.encoder_channels) {
      gate_handles_.emplace_back(c);
      gates_->push_back(gate_handles_.back());
    }
    register_module("gates", gates_);
  }
  main_ = register_module("main", Decoder(config_.encoder_channels, config_.bottleneck_channels));
  for (int k = 0; k < config_.num_aux; ++k) {
    aux_handles_.emplace_back(config_.encoder_channels, config_.bottleneck_channels);
    aux_->push_back(aux_handles_.back());
  }
  register_module("aux", aux_);
}

Decoder MGCCNetImpl::aux_decoder(int k) const {
  TORCH_CHECK(k >= 0 && k < config_.num_aux, "aux decoder index out of range");
  return aux_handles_[static_cast<std::size_t>(k)];
}

AttentionGate MGCCNetImpl::gate(std::size_t scale) const {
  TORCH_CHECK(scale < gate_handles_.size(), "no attention gate at this scale");
  return gate_handles_[scale];
}

torch::Tensor MGCCNetImpl::msag(std::size_t scale, const torch::Tensor& skip) { return gate(scale)->forward(skip); }

torch::Tensor MGCCNetImpl::run_decoder(Decoder& d, const torch::Tensor& in, const std::vector<torch::Tensor>& skips) {
  decoder_calls_ += 1;
  decoder_rows_ += in.size(0);
  return d->forward(in, skips);
}

torch::Tensor MGCCNetImpl::decode(int decoder, const torch::Tensor& bottleneck_in,
                                  const std::vector<torch::Tensor>& skips) {
  TORCH_CHECK(decoder >= 0 && decoder <= config_.num_aux, "decoder index out of range");
  const bool use_msag = config_.msag_enabled[static_cast<std::size_t>(decoder)];
  std::vector<torch::Tensor> used = skips;
  if (use_msag) {
    for (std::size_t i = 0; i < used.size(); ++i) used[i] = msag(i, skips[i]);
  }
  Decoder d = decoder == config_.num_aux ? main_ : aux_decoder(decoder);
  return run_decoder(d, bottleneck_in, used);
}

ForwardOutputs MGCCNetImpl::forward(const torch::Tensor& images, ForwardMode mode, at::Generator* gen) {
  const bool training = mode == ForwardMode::kTrain;
  if (is_training() != training) train(training);

  auto enc = encoder_->forward(images);

  std::set<int> taps{config_.main_tap()};
  if (training) taps.insert(config_.taps.begin(), config_.taps.end() - 1);
  auto features = convmixer_->forward(enc.bottleneck, config_.convmixer_length, taps);

  std::vector<torch::Tensor> gated;
  const bool need_gates = training ? config_.any_msag() : config_.main_uses_msag();
  if (need_gates) {
    for (std::size_t i = 0; i < enc.skips.size(); ++i) gated.push_back(msag(i, enc.skips[i]));
  }
  auto skips_for = [&](int decoder) -> const std::vector<torch::Tensor>& {
    return config_.msag_enabled[static_cast<std::size_t>(decoder)] ? gated : enc.skips;
  };

  ForwardOutputs out;
  out.main_logits = run_decoder(main_, features.at(config_.main_tap()), skips_for(config_.num_aux));
  if (!training) return out;

  at::Generator fallback;
  if (gen == nullptr) {
    fallback = at::detail::getDefaultCPUGenerator();
    gen = &fallback;
  }
  for (int k = 0; k < config_.num_aux; ++k) {
    const auto& spec = config_.perturbations[static_cast<std::size_t>(k)];
    auto input = perturb(features.at(config_.taps[static_cast<std::size_t>(k)]), spec, *gen, mode);
    Decoder d = aux_decoder(k);
    out.aux_logits.push_back(run_decoder(d, input, skips_for(k)));
  }
  return out;
}

// ---------------------------------------------------------------------------

at::Generator make_generator(std::uint64_t seed) { return at::detail::createCPUGenerator(seed); }

namespace {

void init_leaf(torch::nn::Module& m, at::Generator& gen) {
  torch::NoGradGuard guard;
  if (auto* conv = m.as<torch::nn::Conv2dImpl>()) {
    const auto& w = conv->weight;
    const double fan_in = static_cast<double>(w.size(1) * w.size(2) * w.size(3));
    w.normal_(0.0, std::sqrt(2.0 / fan_in), gen);
    if (conv->bias.defined()) conv->bias.zero_();
  } else if (auto* bn = m.as<torch::nn::BatchNorm2dImpl>()) {
    bn->weight.fill_(1.0);
    bn->bias.zero_();
    bn->reset_running_stats();
  } else if (auto* lin = m.as<torch::nn::LinearImpl>()) {
    const double fan_in = static_cast<double>(lin->weight.size(1));
    lin->weight.normal_(0.0, std::sqrt(2.0 / fan_in), gen);
    if (lin->bias.defined()) lin->bias.zero_();
  }
}

}  // namespace

void initialize_module(torch::nn::Module& module, std::uint64_t seed) {
  auto gen = make_generator(seed);
  init_leaf(module, gen);
  for (auto& child : module.modules(/*include_self=*/false)) init_leaf(*child, gen);
}

void initialize(MGCCNetImpl& net, std::uint64_t seed) {
  std::uint64_t group = 0;
  for (const auto& item : net.named_children()) {
    if (item.key() == "aux") {
      for (const auto& sub : item.value()->named_children()) {
        initialize_module(*sub.value(), derive_seed(seed, {stream::kInit, group++}));
      }
    } else {
      initialize_module(*item.value(), derive_seed(seed, {stream::kInit, group++}));
    }
  }
}

std::int64_t count_parameters(const torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

std::int64_t count_parameters(MGCCNetImpl& net, ParameterScope scope) {
  const auto& cfg = net.config();
  const std::int64_t encoder = count_parameters(*net.encoder());
  const std::int64_t convmixer = count_parameters(*net.convmixer());
  std::int64_t gates = 0;
  if (cfg.any_msag()) {
    for (std::size_t i = 0; i < cfg.encoder_channels.size(); ++i) gates += count_parameters(*net.gate(i));
  }
  const std::int64_t main = count_parameters(*net.main_decoder());
  switch (scope) {
    case ParameterScope::kConvMixer:
      return convmixer;
    case ParameterScope::kMsag:
      return gates;
    case ParameterScope::kBaseline:
      return encoder + main;
    case ParameterScope::kInference:
      return encoder + convmixer + (cfg.main_uses_msag() ? gates : 0) + main;
    case ParameterScope::kTraining:
      return count_parameters(net);
  }
  return 0;
}

std::int64_t convmixer_layer_parameter_count(std::int64_t c, int kernel) {
  const std::int64_t k2 = static_cast<std::int64_t>(kernel) * kernel;
  return (k2 * c + c) + (c * c + c) + 4 * c;
}

std::int64_t attention_gate_parameter_count(std::int64_t c) {
  // pointwise + 3×3 + dilated 3×3 (with bias), three BNs, 3C→C fuse
  return (c * c + c) + (9 * c * c + c) + (9 * c * c + c) + 6 * c + (3 * c * c + c);
}

}  // namespace mgcc::nn
