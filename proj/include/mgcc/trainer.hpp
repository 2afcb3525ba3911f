#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mgcc/backbone.hpp"
#include "mgcc/data.hpp"
#include "mgcc/metrics.hpp"
#include "mgcc/objective.hpp"

#include <json.hpp>

namespace mgcc::train {

enum class Mode { kMgcc, kSupervisedOnly };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct OptimConfig {
  double lr0 = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int epochs = 300;
  double poly_power = 0.9;
  int eval_every = 5;
  Mode mode = Mode::kMgcc;

  std::vector<std::string> problems() const;
};

// lr0 · (1 − step/total)^power
double poly_lr(std::int64_t step, std::int64_t total_steps, const OptimConfig& config);

// Everything train_step and fit need besides the data.
struct TrainerConfig {
  nn::NetworkConfig network;
  OptimConfig optim;
  double w_max = 0.1;
  std::uint64_t seed = 0;
  double threshold = 0.5;
  metrics::Averaging averaging = metrics::Averaging::kMacro;
};

// Classical SGD with momentum; weight decay is added to the gradient
// (d = g + wd·p; v = m·v + d; p -= lr·v).
class SgdMomentum {
 public:
  SgdMomentum() = default;
  SgdMomentum(std::vector<torch::Tensor> params, double momentum, double weight_decay);

  void step(double lr);
  void zero_grad();

  std::vector<torch::Tensor>& buffers() noexcept { return velocity_; }
  const std::vector<torch::Tensor>& buffers() const noexcept { return velocity_; }

 private:
  std::vector<torch::Tensor> params_;
  std::vector<torch::Tensor> velocity_;
  double momentum_ = 0.0;
  double weight_decay_ = 0.0;
};

struct MetricRecord {
  std::int64_t epoch = 0;
  std::string split = "val";
  metrics::Scores scores;
  objective::LossReport loss;
};

struct TrainState {
  TrainerConfig config;
  nn::MGCCNet net{nullptr};
  SgdMomentum optimizer;
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  std::int64_t total_steps = 1;
  double best_val_iou = -1.0;
  std::vector<MetricRecord> history;
};

TrainState make_state(const TrainerConfig& config, std::int64_t total_steps);

// One SGD update on a mixed batch. In supervised-only mode the unlabeled half
// is never forwarded. NumericalError on a non-finite loss.
objective::LossReport train_step(TrainState& state, const data::MixedBatch& batch);

// Main-decoder predictions binarized at σ ≥ threshold, scored per image.
metrics::Scores evaluate(nn::MGCCNetImpl& net, const std::vector<data::Sample>& samples, double threshold = 0.5,
                         metrics::Averaging averaging = metrics::Averaging::kMacro);

// Binary H×W masks predicted by the main decoder.
std::vector<data::Mask> predict(nn::MGCCNetImpl& net, const std::vector<data::Sample>& samples,
                                double threshold = 0.5);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
// Rebuilds the network from the embedded config.
TrainState load_checkpoint(const std::filesystem::path& path);
// Refuses (ConfigError listing the differences) when the embedded network
// config differs from `expected`.
TrainState load_checkpoint(const std::filesystem::path& path, const nn::NetworkConfig& expected);

struct FitResult {
  TrainState state;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::filesystem::path log;
};

// `<run>/manifest.json`, `<run>/log.csv`, `<run>/ckpt_best`, `<run>/ckpt_last`,
// `<run>/final_metrics.json`.
FitResult fit(const TrainerConfig& config, const data::BatchComposer& composer,
              const std::vector<data::Sample>& validation, const std::filesystem::path& run_dir,
              const nlohmann::json& run_manifest_extra = nlohmann::json::object());

inline constexpr const char* kCsvHeader =
    "epoch,step,lr,lambda,loss_total,loss_sup,loss_unsup,val_iou,val_recall,val_precision,val_f1";

torch::Tensor images_to_tensor(const std::vector<data::Sample>& samples);
torch::Tensor masks_to_tensor(const std::vector<data::Sample>& samples);

}  // namespace mgcc::train
