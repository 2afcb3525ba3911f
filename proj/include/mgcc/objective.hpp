#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

#include "mgcc/backbone.hpp"

namespace mgcc::objective {

inline constexpr double kDiceSmoothing = 1e-5;

// 0.5 · BCE(σ(logits), target) + (1 − (2Σpy + ε)/(Σp + Σy + ε)), BCE averaged
// over pixels, Dice sums taken over the whole batch. Target must be binary.
torch::Tensor bce_dice(const torch::Tensor& logits, const torch::Tensor& target);

struct SupervisedTerms {
  torch::Tensor loss;                  // mean over the K+1 decoders
  std::vector<double> per_decoder;     // aux_1..aux_K, main
};

// Uses the first `targets.size(0)` rows of every decoder output.
SupervisedTerms supervised_loss(const nn::ForwardOutputs& outputs, const torch::Tensor& targets,
                                int expected_aux);

// Pixel-mean squared difference between σ(aux_k) and the detached σ(main),
// averaged over the K auxiliary decoders. Uses rows [offset, end).
torch::Tensor consistency_loss(const nn::ForwardOutputs& outputs, std::int64_t offset = 0);

struct WarmupSchedule {
  double w_max = 0.1;
  std::int64_t t_max = 1;
};

// w_max · exp(−5 (1 − step/t_max)²); w_max for step > t_max.
double lambda_at(std::int64_t step, const WarmupSchedule& schedule);

struct LossReport {
  double supervised = 0.0;
  double unsupervised = 0.0;
  double lambda = 0.0;
  double total = 0.0;
  std::vector<double> per_decoder_supervised;
};

// NumericalError naming the offending component when a value is not finite.
LossReport total_loss(double supervised, double unsupervised, std::int64_t step, const WarmupSchedule& schedule);

}  // namespace mgcc::objective
