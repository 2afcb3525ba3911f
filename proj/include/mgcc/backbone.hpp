#pragma once

#include <torch/torch.h>

#include <atomic>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace mgcc::nn {

enum class ForwardMode { kTrain, kEval };

enum class PerturbationKind { kNone, kFeatureNoise, kFeatureDrop, kDropout };

std::string to_string(PerturbationKind k);
PerturbationKind perturbation_from_string(const std::string& s);

struct PerturbationSpec {
  PerturbationKind kind = PerturbationKind::kNone;
  double noise_bound = 0.3;                               // f-noise: N ~ U(-b, b)
  std::pair<double, double> drop_threshold_range{0.6, 0.9};  // f-drop: gamma ~ U(lo, hi)
  double dropout_rate = 0.5;

  static PerturbationSpec feature_noise(double bound = 0.3);
  static PerturbationSpec feature_drop(double lo = 0.6, double hi = 0.9);
  static PerturbationSpec dropout(double rate = 0.5);

  std::vector<std::string> problems() const;
  friend bool operator==(const PerturbationSpec&, const PerturbationSpec&) = default;
};

struct NetworkConfig {
  std::int64_t input_channels = 1;
  std::vector<std::int64_t> encoder_channels{64, 128, 256, 512};
  std::int64_t bottleneck_channels = 1024;
  int convmixer_length = 9;
  int convmixer_kernel = 7;
  // taps[k] feeds auxiliary decoder k (k < num_aux); taps[num_aux] feeds the
  // main decoder and must equal convmixer_length.
  std::vector<int> taps{0, 3, 6, 9};
  int num_aux = 3;
  // Indexed aux_1..aux_K, then main.
  std::vector<bool> msag_enabled{true, true, true, true};
  std::vector<PerturbationSpec> perturbations{PerturbationSpec::feature_noise(), PerturbationSpec::feature_drop(),
                                              PerturbationSpec::dropout()};

  // Every violated invariant, empty when valid.
  std::vector<std::string> problems() const;
  void validate() const;  // ConfigError listing all problems

  // Input sides must be multiples of 2^stages.
  std::int64_t spatial_divisor() const { return std::int64_t{1} << encoder_channels.size(); }
  int main_tap() const { return taps.back(); }
  bool main_uses_msag() const { return msag_enabled.back(); }
  bool any_msag() const;

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

// ---------------------------------------------------------------------------

// (3×3 conv → BN → ReLU) × 2
class DoubleConvImpl : public torch::nn::Module {
 public:
  DoubleConvImpl(std::int64_t in_channels, std::int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr};
};
TORCH_MODULE(DoubleConv);

struct EncoderOutput {
  std::vector<torch::Tensor> skips;  // full resolution first
  torch::Tensor bottleneck;
};

class EncoderImpl : public torch::nn::Module {
 public:
  EncoderImpl(std::int64_t input_channels, const std::vector<std::int64_t>& channels,
              std::int64_t bottleneck_channels);
  EncoderOutput forward(const torch::Tensor& images);

 private:
  torch::nn::ModuleList stages_;
  DoubleConv bottleneck_{nullptr};
  std::int64_t divisor_;
};
TORCH_MODULE(Encoder);

// f' = BN(GELU(DepthwiseConv(f))) + f ;  out = BN(GELU(PointwiseConv(f')))
class ConvMixerLayerImpl : public torch::nn::Module {
 public:
  ConvMixerLayerImpl(std::int64_t channels, int kernel);
  torch::Tensor forward(const torch::Tensor& f);

 private:
  torch::nn::Conv2d depthwise_{nullptr}, pointwise_{nullptr};
  torch::nn::BatchNorm2d bn_depthwise_{nullptr}, bn_pointwise_{nullptr};
};
TORCH_MODULE(ConvMixerLayer);

// One stack shared by all decoders; intermediate outputs ("taps") are
// prefixes of the same computation.
class ConvMixerStackImpl : public torch::nn::Module {
 public:
  ConvMixerStackImpl(std::int64_t channels, int kernel, int length);

  // Runs layers 1..max(taps) (bounded by `length`) and returns the requested
  // taps. Tap 0 is the input itself.
  std::map<int, torch::Tensor> forward(const torch::Tensor& f, int length, const std::set<int>& taps);

  int length() const noexcept { return length_; }

 private:
  torch::nn::ModuleList layers_;
  int length_;
};
TORCH_MODULE(ConvMixerStack);

// Multi-scale attention gate: pointwise / 3×3 / dilated 3×3 branches with BN,
// concat, ReLU, pointwise fuse, sigmoid gate g; out = f ⊙ g + f.
class AttentionGateImpl : public torch::nn::Module {
 public:
  explicit AttentionGateImpl(std::int64_t channels);
  torch::Tensor forward(const torch::Tensor& f);

  torch::nn::Conv2d& fuse() { return fuse_; }

 private:
  torch::nn::Conv2d pointwise_{nullptr}, ordinary_{nullptr}, dilated_{nullptr}, fuse_{nullptr};
  torch::nn::BatchNorm2d bn_pointwise_{nullptr}, bn_ordinary_{nullptr}, bn_dilated_{nullptr};
};
TORCH_MODULE(AttentionGate);

// Bilinear 2× upsample → concat skip → DoubleConv per stage; final 1×1 conv to
// one logit channel.
class DecoderImpl : public torch::nn::Module {
 public:
  DecoderImpl(const std::vector<std::int64_t>& encoder_channels, std::int64_t bottleneck_channels);
  torch::Tensor forward(const torch::Tensor& bottleneck, const std::vector<torch::Tensor>& skips);

 private:
  torch::nn::ModuleList stages_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Decoder);

// Identity in eval mode or for kind kNone.
torch::Tensor perturb(const torch::Tensor& f, const PerturbationSpec& spec, at::Generator& gen,
                      ForwardMode mode = ForwardMode::kTrain);

struct ForwardOutputs {
  torch::Tensor main_logits;
  std::vector<torch::Tensor> aux_logits;  // empty in eval mode
};

enum class ParameterScope { kInference, kTraining, kConvMixer, kMsag, kBaseline };

class MGCCNetImpl : public torch::nn::Module {
 public:
  explicit MGCCNetImpl(NetworkConfig config);

  // Train mode runs every decoder with the auxiliary inputs perturbed; eval
  // mode runs the main decoder only. Switches the module's train flag to match.
  ForwardOutputs forward(const torch::Tensor& images, ForwardMode mode, at::Generator* gen = nullptr);

  EncoderOutput encode(const torch::Tensor& images) { return encoder_->forward(images); }
  std::map<int, torch::Tensor> convmixer_forward(const torch::Tensor& f, int length, const std::set<int>& taps) {
    return convmixer_->forward(f, length, taps);
  }
  torch::Tensor msag(std::size_t scale, const torch::Tensor& skip);
  // decoder = num_aux for the main decoder, otherwise an auxiliary index.
  torch::Tensor decode(int decoder, const torch::Tensor& bottleneck_in, const std::vector<torch::Tensor>& skips);

  const NetworkConfig& config() const noexcept { return config_; }
  Encoder& encoder() { return encoder_; }
  ConvMixerStack& convmixer() { return convmixer_; }
  Decoder& main_decoder() { return main_; }
  Decoder aux_decoder(int k) const;
  AttentionGate gate(std::size_t scale) const;

  // Instrumentation: decoder invocations and the batch rows they processed.
  std::int64_t decoder_calls() const noexcept { return decoder_calls_.load(); }
  std::int64_t decoder_rows() const noexcept { return decoder_rows_.load(); }
  void reset_counters() noexcept {
    decoder_calls_ = 0;
    decoder_rows_ = 0;
  }

 private:
  torch::Tensor run_decoder(Decoder& d, const torch::Tensor& in, const std::vector<torch::Tensor>& skips);

  NetworkConfig config_;
  Encoder encoder_{nullptr};
  ConvMixerStack convmixer_{nullptr};
  torch::nn::ModuleList gates_{nullptr};
  Decoder main_{nullptr};
  torch::nn::ModuleList aux_;
  std::vector<AttentionGate> gate_handles_;
  std::vector<Decoder> aux_handles_;
  std::atomic<std::int64_t> decoder_calls_{0};
  std::atomic<std::int64_t> decoder_rows_{0};
};
TORCH_MODULE(MGCCNet);

// Kaiming fan-in normal conv weights, zero conv biases, BN affine (1, 0).
// Each top-level parameter group draws from its own stream derived from seed.
void initialize(MGCCNetImpl& net, std::uint64_t seed);
void initialize_module(torch::nn::Module& module, std::uint64_t seed);

std::int64_t count_parameters(MGCCNetImpl& net, ParameterScope scope);
std::int64_t count_parameters(const torch::nn::Module& module);

// Closed forms.
std::int64_t convmixer_layer_parameter_count(std::int64_t channels, int kernel);
std::int64_t attention_gate_parameter_count(std::int64_t channels);

at::Generator make_generator(std::uint64_t seed);

}  // namespace mgcc::nn
