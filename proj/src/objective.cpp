#include "mgcc/objective.hpp"

#include <cmath>

#include "mgcc/error.hpp"

namespace mgcc::objective {

torch::Tensor bce_dice(const torch::Tensor& logits, const torch::Tensor& target) {
  if (logits.sizes() != target.sizes()) {
    throw DataError("bce_dice: logits " + c10::str(logits.sizes()) + " vs target " + c10::str(target.sizes()));
  }
  const auto t = target.to(logits.scalar_type());
  if (!(t.eq(0) | t.eq(1)).all().item<bool>()) {
    throw DataError("bce_dice: target must be binary");
  }
  auto bce = torch::binary_cross_entropy_with_logits(logits, t);
  auto p = torch::sigmoid(logits);
  auto dice = 1.0 - (2.0 * (p * t).sum() + kDiceSmoothing) / (p.sum() + t.sum() + kDiceSmoothing);
  return 0.5 * bce + dice;
}

SupervisedTerms supervised_loss(const nn::ForwardOutputs& outputs, const torch::Tensor& targets, int expected_aux) {
  if (static_cast<int>(outputs.aux_logits.size()) != expected_aux) {
    throw DataError("supervised_loss: expected " + std::to_string(expected_aux) + " auxiliary outputs, got " +
                    std::to_string(outputs.aux_logits.size()));
  }
  const auto n = targets.size(0);
  SupervisedTerms terms;
  torch::Tensor sum;
  auto add = [&](const torch::Tensor& logits) {
    auto l = bce_dice(logits.narrow(0, 0, n), targets);
    terms.per_decoder.push_back(l.item<double>());
    sum = sum.defined() ? sum + l : l;
  };
  for (const auto& a : outputs.aux_logits) add(a);
  add(outputs.main_logits);
  terms.loss = sum / static_cast<double>(expected_aux + 1);
  return terms;
}

torch::Tensor consistency_loss(const nn::ForwardOutputs& outputs, std::int64_t offset) {
  if (outputs.aux_logits.empty()) throw DataError("consistency_loss needs at least one auxiliary output");
  const auto rows = outputs.main_logits.size(0) - offset;
  if (rows <= 0) throw DataError("consistency_loss: no unlabeled rows");
  auto target = torch::sigmoid(outputs.main_logits.narrow(0, offset, rows)).detach();
  torch::Tensor sum;
  for (const auto& a : outputs.aux_logits) {
    auto d = torch::mse_loss(torch::sigmoid(a.narrow(0, offset, rows)), target);
    sum = sum.defined() ? sum + d : d;
  }
  return sum / static_cast<double>(outputs.aux_logits.size());
}

double lambda_at(std::int64_t step, const WarmupSchedule& schedule) {
  if (step < 0) throw ConfigError("lambda_at: negative step " + std::to_string(step));
  if (schedule.t_max < 1) throw ConfigError("lambda_at: t_max must be >= 1");
  if (step >= schedule.t_max) return schedule.w_max;
  const double phase = 1.0 - static_cast<double>(step) / static_cast<double>(schedule.t_max);
  return schedule.w_max * std::exp(-5.0 * phase * phase);
}

LossReport total_loss(double supervised, double unsupervised, std::int64_t step, const WarmupSchedule& schedule) {
  if (!std::isfinite(supervised)) throw NumericalError("supervised loss is not finite at step " + std::to_string(step));
  if (!std::isfinite(unsupervised)) {
    throw NumericalError("unsupervised loss is not finite at step " + std::to_string(step));
  }
  LossReport r;
  r.supervised = supervised;
  r.unsupervised = unsupervised;
  r.lambda = lambda_at(step, schedule);
  r.total = supervised + r.lambda * unsupervised;
  return r;
}

}  // namespace mgcc::objective
